//! Phase-diagram table: scan classifications against the finiteness threshold.

use gmclab::estimator::{Classification, ScanResult};
use gmclab::exponents::{joint_threshold, predicted_finite};
use gmclab::gmc::GammaParam;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Disagreements with `|p - p_c(q)|` below this count as near the threshold.
pub const THRESHOLD_BAND: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub p: f64,
    pub q: f64,
    pub threshold: f64,
    pub predicted_finite: bool,
    pub classification: Classification,
    pub slope: f64,
    /// Stable where finite is predicted, diverging elsewhere.
    pub agrees: bool,
    pub near_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub gamma: GammaParam,
    pub rows: Vec<PhaseRow>,
    pub agreements: usize,
    pub total: usize,
    pub disagreements_outside_band: usize,
}

impl PhaseDiagram {
    pub const CSV_HEADER: &'static str =
        "p,q,threshold,predicted_finite,classification,slope,agrees,near_threshold";

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.p,
                r.q,
                r.threshold,
                r.predicted_finite,
                r.classification.as_str(),
                r.slope,
                r.agrees,
                r.near_threshold
            ));
        }
        out
    }

    pub fn agreement_rate(&self) -> f64 {
        self.agreements as f64 / self.total as f64
    }
}

/// One row per `(p, q)` of the grid, `p` outermost.
pub fn emit_phase_diagram(
    gamma: GammaParam,
    p_grid: &[f64],
    q_grid: &[f64],
    results: &[ScanResult],
) -> CliResult<PhaseDiagram> {
    let mut rows = Vec::with_capacity(p_grid.len() * q_grid.len());
    for &p in p_grid {
        for &q in q_grid {
            let r = results
                .iter()
                .find(|r| r.p == p && r.q == q)
                .ok_or(CliError::MissingGridPoint { p, q })?;
            let threshold = joint_threshold(q, gamma);
            let finite = predicted_finite(p, q, gamma);
            let agrees = match r.classification {
                Classification::Stable => finite,
                Classification::Diverging => !finite,
                Classification::Inconclusive => false,
            };
            rows.push(PhaseRow {
                p,
                q,
                threshold,
                predicted_finite: finite,
                classification: r.classification,
                slope: r.slope,
                agrees,
                near_threshold: (p - threshold).abs() < THRESHOLD_BAND,
            });
        }
    }
    let agreements = rows.iter().filter(|r| r.agrees).count();
    let disagreements_outside_band = rows
        .iter()
        .filter(|r| !r.agrees && !r.near_threshold)
        .count();
    Ok(PhaseDiagram {
        gamma,
        total: rows.len(),
        rows,
        agreements,
        disagreements_outside_band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(p: f64, q: f64, classification: Classification) -> ScanResult {
        ScanResult {
            gamma: GammaParam::new(1.0).unwrap(),
            p,
            q,
            resolutions: vec![8, 16, 32],
            estimates: vec![],
            slope: 0.0,
            classification,
            outside_validated_regime: false,
        }
    }

    #[test]
    fn threshold_point_is_not_predicted_finite() {
        let g = GammaParam::new(1.0).unwrap();
        let d = emit_phase_diagram(
            g,
            &[2.0],
            &[0.0],
            &[result(2.0, 0.0, Classification::Diverging)],
        )
        .unwrap();
        assert!(!d.rows[0].predicted_finite);
        assert!(d.rows[0].agrees && d.rows[0].near_threshold);
    }

    #[test]
    fn zero_exponent_is_finite_and_stable() {
        let g = GammaParam::new(1.5).unwrap();
        let rs: Vec<_> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&q| result(0.0, q, Classification::Stable))
            .collect();
        let d = emit_phase_diagram(g, &[0.0], &[0.0, 1.0, 2.0], &rs).unwrap();
        assert!(d.rows.iter().all(|r| r.predicted_finite && r.agrees));
        assert_eq!(d.agreement_rate(), 1.0);
    }

    #[test]
    fn missing_point() {
        let g = GammaParam::new(1.0).unwrap();
        let err = emit_phase_diagram(
            g,
            &[0.5, 1.0],
            &[0.0],
            &[result(0.5, 0.0, Classification::Stable)],
        );
        assert!(matches!(err, Err(CliError::MissingGridPoint { p, q }) if p == 1.0 && q == 0.0));
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let g = GammaParam::new(1.5).unwrap();
        let rs = vec![
            result(0.5, 0.0, Classification::Stable),
            result(0.5, 1.0, Classification::Inconclusive),
        ];
        let d = emit_phase_diagram(g, &[0.5], &[0.0, 1.0], &rs).unwrap();
        let csv = d.csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(PhaseDiagram::CSV_HEADER));
        assert_eq!(d.agreements, 1);
        assert_eq!(d.disagreements_outside_band, 1);
    }
}
