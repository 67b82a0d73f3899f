//! Bulk, boundary and localized GMC masses as lattice sums.
//!
//! Bulk weight of a site `z = (x, y)`:
//! `exp(g X - g^2/2 var) * y^(-g^2/2) * |z - v|^(-g^2) * h^2`.
//! Boundary weight of a site `x`:
//! `exp(g/2 X - g^2/8 var) * |x - v|^(-g^2/2) * h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::HalfPlanePoint;
use crate::lattice::{CovarianceModel, FieldSample, Lattice, Region};

/// Subcritical coupling `gamma` in `(0, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GammaParam(f64);

impl GammaParam {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 2.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidGamma(gamma))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn squared(self) -> f64 {
        self.0 * self.0
    }
}

impl TryFrom<f64> for GammaParam {
    type Error = Error;
    fn try_from(g: f64) -> Result<Self> {
        Self::new(g)
    }
}

impl From<GammaParam> for f64 {
    fn from(g: GammaParam) -> f64 {
        g.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassWeights {
    pub gamma: GammaParam,
    /// Insertion point `v` on the real line.
    pub localization: Option<f64>,
    /// Include the `y^(-g^2/2)` background factor in bulk masses.
    pub background: bool,
}

impl MassWeights {
    pub fn new(gamma: GammaParam) -> Self {
        Self {
            gamma,
            localization: None,
            background: true,
        }
    }

    pub fn localized(gamma: GammaParam, v: f64) -> Self {
        Self {
            gamma,
            localization: Some(v),
            background: true,
        }
    }

    pub fn without_background(mut self) -> Self {
        self.background = false;
        self
    }
}

/// A mass together with a flag raised when no site fell in the subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mass {
    pub value: f64,
    pub empty_subset: bool,
}

/// Precomputed site weights of one mass functional, reusable across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MassPlan {
    offset: usize,
    /// `(site index within the lattice, deterministic weight)`.
    sites: Vec<(usize, f64)>,
    field_coef: f64,
    var_coef: f64,
    lattice_len: usize,
}

impl MassPlan {
    pub fn bulk(bulk: &Lattice, subset: &dyn Region, w: &MassWeights) -> Result<Self> {
        if bulk.is_boundary() {
            return Err(Error::InvalidRegion(
                "bulk mass needs a bulk lattice".into(),
            ));
        }
        let g2 = w.gamma.squared();
        let sites = bulk
            .sites
            .iter()
            .enumerate()
            .filter(|(_, z)| subset.contains(**z))
            .map(|(i, z)| {
                let mut weight = bulk.cell_measure;
                if w.background {
                    weight *= z.y.powf(-g2 / 2.0);
                }
                if let Some(v) = w.localization {
                    weight *= z.dist(&HalfPlanePoint::boundary(v)).powf(-g2);
                }
                (i, weight)
            })
            .collect();
        Ok(Self {
            offset: 0,
            sites,
            field_coef: w.gamma.value(),
            var_coef: g2 / 2.0,
            lattice_len: bulk.len(),
        })
    }

    /// Boundary plan; `offset` is the index of the first boundary site in the sample.
    pub fn boundary(
        boundary: &Lattice,
        offset: usize,
        subset: &dyn Region,
        w: &MassWeights,
    ) -> Result<Self> {
        if !boundary.is_boundary() {
            return Err(Error::InvalidRegion(
                "boundary mass needs a boundary lattice".into(),
            ));
        }
        let g2 = w.gamma.squared();
        let mut sites = Vec::new();
        for (i, z) in boundary.sites.iter().enumerate() {
            if !subset.contains(*z) {
                continue;
            }
            let mut weight = boundary.cell_measure;
            if let Some(v) = w.localization {
                if z.x == v {
                    return Err(Error::SiteOnInsertion { site: z.x });
                }
                weight *= (z.x - v).abs().powf(-g2 / 2.0);
            }
            sites.push((i, weight));
        }
        Ok(Self {
            offset,
            sites,
            field_coef: w.gamma.value() / 2.0,
            var_coef: g2 / 8.0,
            lattice_len: boundary.len(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    /// Site indices within the full sample, with their deterministic weights.
    pub fn weighted_sites(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.sites.iter().map(move |&(i, w)| (self.offset + i, w))
    }

    pub fn field_coefficient(&self) -> f64 {
        self.field_coef
    }

    pub fn variance_coefficient(&self) -> f64 {
        self.var_coef
    }

    fn check(&self, sample: &FieldSample, expected_len: usize) -> Result<()> {
        if self.lattice_len != expected_len {
            return Err(Error::LengthMismatch {
                expected: expected_len,
                got: self.lattice_len,
            });
        }
        if sample.values.len() != sample.layout.len() {
            return Err(Error::LengthMismatch {
                expected: sample.layout.len(),
                got: sample.values.len(),
            });
        }
        Ok(())
    }

    /// Mass of `sample` without layout checks.
    pub fn eval(&self, sample: &FieldSample) -> f64 {
        self.eval_values(&sample.values, &sample.variances)
    }

    pub fn eval_values(&self, values: &[f64], variances: &[f64]) -> f64 {
        self.sites
            .iter()
            .map(|&(i, w)| {
                let k = self.offset + i;
                w * (self.field_coef * values[k] - self.var_coef * variances[k]).exp()
            })
            .sum()
    }
}

/// Bulk GMC mass of the sites of `bulk` inside `subset`.
pub fn bulk_mass(
    sample: &FieldSample,
    bulk: &Lattice,
    subset: &dyn Region,
    w: &MassWeights,
) -> Result<Mass> {
    let plan = MassPlan::bulk(bulk, subset, w)?;
    plan.check(sample, sample.layout.n_bulk)?;
    Ok(Mass {
        value: plan.eval(sample),
        empty_subset: plan.is_empty(),
    })
}

/// Boundary GMC mass of the sites of `boundary` inside `subset`.
pub fn boundary_mass(
    sample: &FieldSample,
    boundary: &Lattice,
    subset: &dyn Region,
    w: &MassWeights,
) -> Result<Mass> {
    let plan = MassPlan::boundary(boundary, sample.layout.n_bulk, subset, w)?;
    plan.check(sample, sample.layout.n_boundary)?;
    Ok(Mass {
        value: plan.eval(sample),
        empty_subset: plan.is_empty(),
    })
}

/// `bulk^p / boundary^q`, refusing zero masses raised to negative powers.
pub fn quotient(bulk: f64, boundary: f64, p: f64, q: f64) -> Result<f64> {
    if q != 0.0 && !(boundary > 0.0) {
        return Err(Error::DegenerateDenominator(boundary));
    }
    if p < 0.0 && !(bulk > 0.0) {
        return Err(Error::DegenerateDenominator(bulk));
    }
    let num = if p == 0.0 { 1.0 } else { bulk.powf(p) };
    let den = if q == 0.0 { 1.0 } else { boundary.powf(q) };
    Ok(num / den)
}

/// `mu_H(Q)^p / mu_bd(I)^q` for one sample.
#[allow(clippy::too_many_arguments)]
pub fn quotient_statistic(
    sample: &FieldSample,
    bulk: &Lattice,
    boundary: &Lattice,
    q_region: &dyn Region,
    interval: &dyn Region,
    p: f64,
    q: f64,
    w: &MassWeights,
) -> Result<f64> {
    let b = bulk_mass(sample, bulk, q_region, w)?;
    let d = boundary_mass(sample, boundary, interval, w)?;
    quotient(b.value, d.value, p, q)
}

/// `(gamma/2)` times the covariance column of boundary site `index`.
pub fn girsanov_tilt(model: &CovarianceModel, index: usize, gamma: GammaParam) -> Result<Vec<f64>> {
    let layout = model.layout();
    if index >= layout.n_boundary {
        return Err(Error::IndexOutOfRange {
            index,
            len: layout.n_boundary,
        });
    }
    let col = layout.boundary_offset() + index;
    let half = gamma.value() / 2.0;
    Ok(model
        .matrix()
        .column(col)
        .iter()
        .map(|c| half * c)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::lattice::{
        assemble_covariance, build_lattice, sample_field, shift_field, AssemblyOptions, Interval,
        LatticeRegion, Rect, RngStream, SiteLayout,
    };
    use nalgebra::DMatrix;

    fn g(v: f64) -> GammaParam {
        GammaParam::new(v).unwrap()
    }

    fn one_bulk_site() -> Lattice {
        Lattice {
            region: LatticeRegion::Bulk(Rect::new(-0.25, 0.25, 0.25, 0.75).unwrap()),
            n_cells: 1,
            n_rows: 1,
            h: 0.5,
            sites: vec![HalfPlanePoint { x: 0.0, y: 0.5 }],
            cell_measure: 0.25,
        }
    }

    fn one_boundary_site(x: f64) -> Lattice {
        Lattice {
            region: LatticeRegion::Boundary(Interval::new(x - 0.25, x + 0.25).unwrap()),
            n_cells: 1,
            n_rows: 1,
            h: 0.5,
            sites: vec![HalfPlanePoint::boundary(x)],
            cell_measure: 0.5,
        }
    }

    fn toy_sample() -> FieldSample {
        FieldSample {
            values: vec![0.3, 0.4],
            variances: vec![1.0, 1.0],
            layout: SiteLayout {
                n_bulk: 1,
                n_boundary: 1,
            },
        }
    }

    fn everything() -> impl Region {
        |_: HalfPlanePoint| true
    }

    #[test]
    fn gamma_range() {
        assert!(GammaParam::new(0.0).is_err());
        assert!(GammaParam::new(2.0).is_err());
        assert!(GammaParam::new(1.99).is_ok());
        assert!(serde_json::from_str::<GammaParam>("2.5").is_err());
    }

    #[test]
    fn single_bulk_site_mass() {
        let m = bulk_mass(
            &toy_sample(),
            &one_bulk_site(),
            &everything(),
            &MassWeights::new(g(1.0)),
        )
        .unwrap();
        let expected = (0.3f64 - 0.5).exp() * 0.5f64.powf(-0.5) * 0.25;
        assert!((m.value - expected).abs() < 1e-15);
        assert!((m.value - 0.28955).abs() < 1e-4);
        assert!(!m.empty_subset);
    }

    #[test]
    fn bulk_localization_factor() {
        let s = toy_sample();
        let plain = bulk_mass(
            &s,
            &one_bulk_site(),
            &everything(),
            &MassWeights::new(g(1.0)),
        )
        .unwrap();
        let loc = bulk_mass(
            &s,
            &one_bulk_site(),
            &everything(),
            &MassWeights::localized(g(1.0), 0.0),
        )
        .unwrap();
        assert!((loc.value / plain.value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn single_boundary_site_mass() {
        let s = toy_sample();
        let m = boundary_mass(
            &s,
            &one_boundary_site(0.0),
            &everything(),
            &MassWeights::new(g(1.0)),
        )
        .unwrap();
        let expected = (0.2f64 - 0.125).exp() * 0.5;
        assert!((m.value - expected).abs() < 1e-15);
        assert!((m.value - 0.53897).abs() < 1e-4);
    }

    #[test]
    fn boundary_localization_factor_and_insertion_guard() {
        let s = toy_sample();
        let lat = one_boundary_site(0.25);
        let plain = boundary_mass(&s, &lat, &everything(), &MassWeights::new(g(1.0))).unwrap();
        let loc = boundary_mass(
            &s,
            &lat,
            &everything(),
            &MassWeights::localized(g(1.0), 0.0),
        )
        .unwrap();
        assert!((loc.value / plain.value - 2.0).abs() < 1e-14);
        assert_eq!(
            boundary_mass(
                &s,
                &lat,
                &everything(),
                &MassWeights::localized(g(1.0), 0.25)
            )
            .unwrap_err(),
            Error::SiteOnInsertion { site: 0.25 }
        );
    }

    #[test]
    fn toy_quotient() {
        let s = toy_sample();
        let w = MassWeights::new(g(1.0));
        let (b, d) = (one_bulk_site(), one_boundary_site(0.0));
        let v = quotient_statistic(&s, &b, &d, &everything(), &everything(), 2.0, 1.0, &w).unwrap();
        assert!((v - 0.15556).abs() < 1e-4);
        assert_eq!(
            quotient_statistic(&s, &b, &d, &everything(), &everything(), 0.0, 0.0, &w).unwrap(),
            1.0
        );
        let bm = bulk_mass(&s, &b, &everything(), &w).unwrap().value;
        assert_eq!(
            quotient_statistic(&s, &b, &d, &everything(), &everything(), 1.0, 0.0, &w).unwrap(),
            bm
        );
    }

    #[test]
    fn degenerate_masses() {
        assert_eq!(
            quotient(1.0, 0.0, 1.0, 1.0),
            Err(Error::DegenerateDenominator(0.0))
        );
        assert_eq!(
            quotient(0.0, 1.0, -1.0, 0.0),
            Err(Error::DegenerateDenominator(0.0))
        );
        assert_eq!(quotient(2.0, 0.0, 1.0, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn empty_subset_flagged() {
        let none = |_: HalfPlanePoint| false;
        let m = bulk_mass(
            &toy_sample(),
            &one_bulk_site(),
            &none,
            &MassWeights::new(g(1.0)),
        )
        .unwrap();
        assert_eq!(
            m,
            Mass {
                value: 0.0,
                empty_subset: true
            }
        );
    }

    #[test]
    fn background_flag_drops_height_factor() {
        let w = MassWeights::new(g(1.0)).without_background();
        let m = bulk_mass(&toy_sample(), &one_bulk_site(), &everything(), &w).unwrap();
        assert!((m.value - (0.3f64 - 0.5).exp() * 0.25).abs() < 1e-15);
    }

    fn small_setup() -> (Lattice, Lattice, CovarianceModel) {
        let q = build_lattice(Rect::new(-0.5, 0.5, 0.0, 1.0).unwrap(), 4).unwrap();
        let i = build_lattice(Interval::new(-0.5, 0.5).unwrap(), 4).unwrap();
        let m = assemble_covariance(
            Some(&q),
            Some(&i),
            &KernelSpec::exact_scaling(),
            &AssemblyOptions::default(),
        )
        .unwrap();
        (q, i, m)
    }

    #[test]
    fn monotone_in_region() {
        let (q, _, m) = small_setup();
        let w = MassWeights::new(g(1.3));
        let small = Rect::new(-0.25, 0.25, 0.0, 0.5).unwrap();
        let big = Rect::new(-0.5, 0.5, 0.0, 0.75).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..50 {
            let s = sample_field(&m, &mut rng);
            assert!(
                bulk_mass(&s, &q, &small, &w).unwrap().value
                    <= bulk_mass(&s, &q, &big, &w).unwrap().value
            );
        }
    }

    #[test]
    fn localized_weights_are_deterministic_multipliers() {
        let (q, i, m) = small_setup();
        let s = sample_field(&m, &mut RngStream::new(9, 0));
        let gm = g(1.0);
        let v = 0.0;
        let loc = bulk_mass(&s, &q, &everything(), &MassWeights::localized(gm, v))
            .unwrap()
            .value;
        let manual: f64 = q
            .sites
            .iter()
            .map(|z| {
                let single = |w: HalfPlanePoint| w == *z;
                bulk_mass(&s, &q, &single, &MassWeights::new(gm))
                    .unwrap()
                    .value
                    * z.dist(&HalfPlanePoint::boundary(v)).powi(-1)
            })
            .sum();
        assert!((loc - manual).abs() < 1e-12 * loc);
        assert!(boundary_mass(&s, &i, &everything(), &MassWeights::localized(gm, v)).is_ok());
    }

    #[test]
    fn tilt_is_scaled_column() {
        let (_, i, m) = small_setup();
        let t = girsanov_tilt(&m, 2, g(1.2)).unwrap();
        let col = m.layout().n_bulk + 2;
        for (k, v) in t.iter().enumerate() {
            assert_eq!(*v, 0.6 * m.entry(k, col));
        }
        assert_eq!(
            girsanov_tilt(&m, i.len(), g(1.0)),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        );
    }

    #[test]
    fn zero_column_tilt_is_identity() {
        let mat = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let m = CovarianceModel::from_matrix(
            mat,
            SiteLayout {
                n_bulk: 1,
                n_boundary: 1,
            },
            0.01,
        )
        .unwrap();
        let t = girsanov_tilt(&m, 0, g(1.0)).unwrap();
        let s = sample_field(&m, &mut RngStream::new(1, 1));
        assert_eq!(shift_field(&s, &t).unwrap(), s);
    }
}
