//! Monte Carlo estimation of bulk/boundary quotient moments.
//!
//! Every routine draws its samples through [`sample_map`], so results depend
//! only on the seed and the configuration, never on the worker count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{predicted_finite, zeta_bar, zeta_tilde, MomentParams};
use crate::gmc::{quotient, GammaParam, MassPlan, MassWeights};
use crate::kernels::{KernelKind, KernelSpec};
use crate::lattice::cache::CovarianceCache;
use crate::lattice::{
    assemble_covariance, build_lattice, sample_map, AssemblyOptions, CovarianceModel, Interval,
    Lattice, Rect, RepairReport,
};

/// Blocks used by the median-of-means estimator.
pub const MOM_BLOCKS: usize = 32;
/// `sqrt(pi / 2)`: asymptotic ratio of the sd of a median to the sd of a mean.
const MEDIAN_SE_FACTOR: f64 = 1.2533;
/// Excluded fraction above which an estimate is flagged unreliable.
const UNRELIABLE_FRACTION: f64 = 0.01;

/// `E[mu_H(Q)^p / mu_bd(I)^q]` at one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentQuery {
    pub gamma: GammaParam,
    pub p: f64,
    pub q: f64,
    pub region: Rect,
    pub interval: Interval,
    /// Insertion point `v` for localized masses.
    #[serde(default)]
    pub localization: Option<f64>,
    /// Cells across the width of `region`; the interval uses the same spacing.
    pub n_cells: usize,
    #[serde(default = "default_true")]
    pub background: bool,
}

fn default_true() -> bool {
    true
}

impl MomentQuery {
    /// Query over the Carleson cube `[-r, r] x [0, 2r]` and its base `[-r, r]`.
    pub fn carleson(gamma: GammaParam, p: f64, q: f64, r: f64, n_cells: usize) -> Result<Self> {
        let region = Rect::carleson(r)?;
        Ok(Self {
            gamma,
            p,
            q,
            region,
            interval: region.projection(),
            localization: None,
            n_cells,
            background: true,
        })
    }

    pub fn localized(mut self, v: f64) -> Self {
        self.localization = Some(v);
        self
    }

    pub fn with_n_cells(mut self, n_cells: usize) -> Self {
        self.n_cells = n_cells;
        self
    }

    pub fn params(&self) -> MomentParams {
        MomentParams::new(self.p, self.q, self.gamma)
    }

    pub fn weights(&self) -> MassWeights {
        let mut w = match self.localization {
            Some(v) => MassWeights::localized(self.gamma, v),
            None => MassWeights::new(self.gamma),
        };
        w.background = self.background;
        w
    }

    /// Image of the configuration under `z -> r z`.
    pub fn scaled(&self, r: f64) -> Self {
        Self {
            region: self.region.scaled(r),
            interval: self.interval.scaled(r),
            localization: self.localization.map(|v| r * v),
            ..*self
        }
    }

    /// Negative exponents are allowed but lie outside the validated regime.
    pub fn outside_validated_regime(&self) -> bool {
        self.p < 0.0 || self.q < 0.0
    }

    /// True when `p` is not strictly below the joint finiteness threshold.
    pub fn above_threshold(&self) -> bool {
        !predicted_finite(self.p, self.q, self.gamma)
    }

    fn boundary_cells(&self) -> Result<usize> {
        let h = self.region.width() / self.n_cells as f64;
        let ratio = self.interval.len() / h;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "interval length {} is not a whole number of cells of width {h}",
                self.interval.len()
            )));
        }
        Ok(n as usize)
    }
}

/// Lattices, covariance model and mass plans for one query.
#[derive(Debug, Clone)]
pub struct MomentSetup {
    pub query: MomentQuery,
    pub bulk: Lattice,
    pub boundary: Lattice,
    pub model: CovarianceModel,
    pub bulk_plan: MassPlan,
    pub boundary_plan: MassPlan,
}

impl MomentSetup {
    pub fn new(
        query: &MomentQuery,
        spec: &KernelSpec,
        opts: &AssemblyOptions,
        cache: Option<&CovarianceCache>,
    ) -> Result<Self> {
        let bulk = build_lattice(query.region, query.n_cells)?;
        let boundary = build_lattice(query.interval, query.boundary_cells()?)?;
        let model = match cache {
            Some(c) => c.load_or_assemble(Some(&bulk), Some(&boundary), spec, opts)?,
            None => assemble_covariance(Some(&bulk), Some(&boundary), spec, opts)?,
        };
        Self::with_model(query, bulk, boundary, model)
    }

    /// Reuses `model` for a query with different exponents on the same lattices.
    pub fn with_model(
        query: &MomentQuery,
        bulk: Lattice,
        boundary: Lattice,
        model: CovarianceModel,
    ) -> Result<Self> {
        let w = query.weights();
        let bulk_plan = MassPlan::bulk(&bulk, &query.region, &w)?;
        let boundary_plan = MassPlan::boundary(&boundary, bulk.len(), &query.interval, &w)?;
        Ok(Self {
            query: *query,
            bulk,
            boundary,
            model,
            bulk_plan,
            boundary_plan,
        })
    }

    /// `(mu_H(Q), mu_bd(I))` for one field realization.
    pub fn masses(&self, values: &[f64]) -> (f64, f64) {
        let vars = self.model.variances();
        (
            self.bulk_plan.eval_values(values, vars),
            self.boundary_plan.eval_values(values, vars),
        )
    }

    /// Quotient of one realization, `None` when it must be excluded.
    pub fn statistic(&self, values: &[f64]) -> Option<f64> {
        let (b, d) = self.masses(values);
        finite(quotient(b, d, self.query.p, self.query.q).ok())
    }
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorMethod {
    Mean,
    MedianOfMeans { blocks: usize },
}

impl EstimatorMethod {
    pub fn median_of_means() -> Self {
        EstimatorMethod::MedianOfMeans { blocks: MOM_BLOCKS }
    }

    pub fn label(&self) -> String {
        match self {
            EstimatorMethod::Mean => "mean".into(),
            EstimatorMethod::MedianOfMeans { blocks } => format!("median-of-means({blocks})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub point_estimate: f64,
    pub se: f64,
    pub method: EstimatorMethod,
    pub n_samples: usize,
    pub n_excluded: usize,
    pub n_cells: usize,
    /// More than 1% of samples were excluded.
    pub unreliable: bool,
}

impl MomentEstimate {
    /// Summarizes per-sample values in sample order; `None` entries are excluded.
    pub fn from_values(
        values: &[Option<f64>],
        method: EstimatorMethod,
        n_cells: usize,
    ) -> Result<Self> {
        let used: Vec<f64> = values.iter().flatten().copied().collect();
        let n_excluded = values.len() - used.len();
        let (point_estimate, se) = match method {
            EstimatorMethod::Mean => {
                if used.len() < 2 {
                    return Err(Error::InsufficientSamples {
                        needed: 2,
                        have: used.len(),
                    });
                }
                let (m, sd) = mean_sd(&used);
                (m, sd / (used.len() as f64).sqrt())
            }
            EstimatorMethod::MedianOfMeans { blocks } => median_of_means(&used, blocks)?,
        };
        Ok(Self {
            point_estimate,
            se,
            method,
            n_samples: values.len(),
            n_excluded,
            n_cells,
            unreliable: n_excluded as f64 > UNRELIABLE_FRACTION * values.len() as f64,
        })
    }

    pub const CSV_HEADER: &'static str =
        "n_cells,method,point_estimate,se,n_samples,n_excluded,unreliable";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n_cells,
            self.method.label(),
            self.point_estimate,
            self.se,
            self.n_samples,
            self.n_excluded,
            self.unreliable
        )
    }
}

/// Mean and sample standard deviation, accumulated in order.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median of `blocks` consecutive block means, with SE `1.2533 sd / sqrt(blocks)`.
pub fn median_of_means(xs: &[f64], blocks: usize) -> Result<(f64, f64)> {
    if blocks == 0 || xs.len() < blocks {
        return Err(Error::InsufficientSamples {
            needed: blocks.max(1),
            have: xs.len(),
        });
    }
    let base = xs.len() / blocks;
    let extra = xs.len() % blocks;
    let mut means = Vec::with_capacity(blocks);
    let mut start = 0;
    for b in 0..blocks {
        let len = base + usize::from(b < extra);
        means.push(xs[start..start + len].iter().sum::<f64>() / len as f64);
        start += len;
    }
    let (_, sd) = mean_sd(&means);
    means.sort_by(f64::total_cmp);
    Ok((
        median(&means),
        MEDIAN_SE_FACTOR * sd / (blocks as f64).sqrt(),
    ))
}

/// Median-of-means estimate of the query moment from `n_samples` fresh samples.
pub fn estimate_joint_moment(
    setup: &MomentSetup,
    seed: u64,
    stream_base: u64,
    n_samples: usize,
) -> Result<MomentEstimate> {
    estimate_with(
        setup,
        seed,
        stream_base,
        n_samples,
        EstimatorMethod::median_of_means(),
    )
}

pub fn estimate_with(
    setup: &MomentSetup,
    seed: u64,
    stream_base: u64,
    n_samples: usize,
    method: EstimatorMethod,
) -> Result<MomentEstimate> {
    let values = sample_map(&setup.model, seed, stream_base, n_samples, |s| {
        setup.statistic(&s.values)
    });
    MomentEstimate::from_values(&values, method, setup.query.n_cells)
}

/// `E[mass]` on the lattice: the sum of deterministic weights.
pub fn expected_mass(plan: &MassPlan) -> f64 {
    plan.weighted_sites().map(|(_, w)| w).sum()
}

/// `E[mass^2] = sum_ij w_i w_j exp(c^2 C_ij)` with `c` the field coefficient.
pub fn mass_second_moment(plan: &MassPlan, model: &CovarianceModel) -> f64 {
    let c2 = plan.field_coefficient().powi(2);
    let sites: Vec<(usize, f64)> = plan.weighted_sites().collect();
    let mut s = 0.0;
    for &(i, wi) in &sites {
        for &(j, wj) in &sites {
            s += wi * wj * (c2 * model.entry(i, j)).exp();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub r: f64,
    pub exponent: f64,
    pub ratio: f64,
    pub predicted: f64,
    pub log_ratio_se: f64,
    pub z_score: f64,
    pub base: MomentEstimate,
    pub scaled: MomentEstimate,
    /// Repair reports of the base and scaled models.
    #[serde(skip)]
    pub repair_reports: Vec<RepairReport>,
}

fn check_dyadic(r: f64) -> Result<()> {
    let scaled = r * (1u64 << 40) as f64;
    if !(r > 0.0 && r < 1.0) || scaled.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "scaling factor {r} is not a dyadic rational in (0, 1)"
        )));
    }
    Ok(())
}

/// Compares the moment of the query with that of its image under `z -> r z`
/// against `r^zeta`, using independent samples at the two scales.
pub fn verify_scaling(
    query: &MomentQuery,
    r: f64,
    spec: &KernelSpec,
    opts: &AssemblyOptions,
    cache: Option<&CovarianceCache>,
    seed: u64,
    n_samples: usize,
) -> Result<ScalingCheck> {
    if spec.kind() != KernelKind::ExactScaling {
        return Err(Error::NotExactScaling);
    }
    check_dyadic(r)?;
    let params = query.params();
    let exponent = if query.localization.is_some() {
        zeta_tilde(&params)
    } else {
        zeta_bar(&params)
    };
    let base_setup = MomentSetup::new(query, spec, opts, cache)?;
    let base = estimate_joint_moment(&base_setup, seed, 0, n_samples)?;
    let mut repair_reports = vec![*base_setup.model.repair_report()];
    drop(base_setup);
    let scaled_setup = MomentSetup::new(&query.scaled(r), spec, opts, cache)?;
    let scaled = estimate_joint_moment(&scaled_setup, seed, 1 << 32, n_samples)?;
    repair_reports.push(*scaled_setup.model.repair_report());
    let ratio = scaled.point_estimate / base.point_estimate;
    let predicted = r.powf(exponent);
    let log_ratio_se = ((scaled.se / scaled.point_estimate).powi(2)
        + (base.se / base.point_estimate).powi(2))
    .sqrt();
    let z_score = z(ratio.ln() - predicted.ln(), log_ratio_se);
    Ok(ScalingCheck {
        r,
        exponent,
        ratio,
        predicted,
        log_ratio_se,
        z_score,
        base,
        scaled,
        repair_reports,
    })
}

fn z(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Functional `F` in `E[mu_bd(I) F(X)] = sum_w h E[F(X + gamma/2 C(., w))]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GirsanovFunctional {
    One,
    BoundaryMass,
    BulkMass,
    /// `mu_H(Q)^p / mu_bd(I)^(q + 1)`.
    Quotient {
        p: f64,
        q: f64,
    },
}

impl GirsanovFunctional {
    fn eval(&self, bulk: f64, boundary: f64) -> Option<f64> {
        match *self {
            GirsanovFunctional::One => Some(1.0),
            GirsanovFunctional::BoundaryMass => Some(boundary),
            GirsanovFunctional::BulkMass => Some(bulk),
            GirsanovFunctional::Quotient { p, q } => {
                finite(quotient(bulk, boundary, p, q + 1.0).ok())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovCheck {
    pub functional: GirsanovFunctional,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// Mean and SE of the per-sample difference `lhs - rhs`.
    pub paired_diff: f64,
    pub paired_se: f64,
    pub z_score: f64,
    pub n_samples: usize,
    pub n_excluded: usize,
}

/// Per-site multipliers `exp(c gamma/2 C(i, w))` of a plan under the tilt toward boundary site `w`.
fn tilt_table(setup: &MomentSetup, plan: &MassPlan) -> Vec<Vec<f64>> {
    let g_half = setup.query.gamma.value() / 2.0;
    let c = plan.field_coefficient();
    let off = setup.model.layout().boundary_offset();
    (0..setup.boundary.len())
        .map(|w| {
            plan.weighted_sites()
                .map(|(i, _)| (c * g_half * setup.model.entry(i, off + w)).exp())
                .collect()
        })
        .collect()
}

fn site_terms(plan: &MassPlan, values: &[f64], vars: &[f64]) -> Vec<f64> {
    let (c, vc) = (plan.field_coefficient(), plan.variance_coefficient());
    plan.weighted_sites()
        .map(|(i, w)| w * (c * values[i] - vc * vars[i]).exp())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Paired Monte Carlo check of the discretized Girsanov identity: the tilt
/// toward boundary site `w` adds `gamma/2` times column `w` of the covariance.
pub fn verify_girsanov(
    setup: &MomentSetup,
    functional: GirsanovFunctional,
    seed: u64,
    n_samples: usize,
) -> Result<GirsanovCheck> {
    if setup.query.localization.is_some() {
        return Err(Error::InvalidArgument(
            "the Girsanov check uses unlocalized masses".into(),
        ));
    }
    let bulk_tilt = tilt_table(setup, &setup.bulk_plan);
    let bd_tilt = tilt_table(setup, &setup.boundary_plan);
    let h = setup.boundary.cell_measure;
    let vars = setup.model.variances();
    let pairs = sample_map(&setup.model, seed, 0, n_samples, |s| {
        let bt = site_terms(&setup.bulk_plan, &s.values, vars);
        let dt = site_terms(&setup.boundary_plan, &s.values, vars);
        let (b, d) = (bt.iter().sum::<f64>(), dt.iter().sum::<f64>());
        let lhs = functional.eval(b, d).map(|f| d * f)?;
        let mut rhs = 0.0;
        for w in 0..bd_tilt.len() {
            rhs += h * functional.eval(dot(&bt, &bulk_tilt[w]), dot(&dt, &bd_tilt[w]))?;
        }
        finite(Some(lhs)).zip(finite(Some(rhs)))
    });
    let used: Vec<(f64, f64)> = pairs.iter().flatten().copied().collect();
    if used.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            have: used.len(),
        });
    }
    let n = (used.len() as f64).sqrt();
    let (lhs, lsd) = mean_sd(&used.iter().map(|p| p.0).collect::<Vec<_>>());
    let (rhs, rsd) = mean_sd(&used.iter().map(|p| p.1).collect::<Vec<_>>());
    let (diff, dsd) = mean_sd(&used.iter().map(|p| p.0 - p.1).collect::<Vec<_>>());
    Ok(GirsanovCheck {
        functional,
        lhs,
        rhs,
        lhs_se: lsd / n,
        rhs_se: rsd / n,
        paired_diff: diff,
        paired_se: dsd / n,
        z_score: z(diff, dsd / n),
        n_samples,
        n_excluded: n_samples - used.len(),
    })
}

/// Both sides of the Girsanov identity for `F = mu_bd(I)` in closed form:
/// the left as a lognormal second moment, the right as a sum of tilted means.
pub fn girsanov_boundary_closed_form(setup: &MomentSetup) -> (f64, f64) {
    let lhs = mass_second_moment(&setup.boundary_plan, &setup.model);
    let h = setup.boundary.cell_measure;
    let weights: Vec<f64> = setup
        .boundary_plan
        .weighted_sites()
        .map(|(_, w)| w)
        .collect();
    let rhs = tilt_table(setup, &setup.boundary_plan)
        .iter()
        .map(|t| h * dot(&weights, t))
        .sum();
    (lhs, rhs)
}

/// Slope cut-offs for classifying a resolution scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanThresholds {
    /// `|slope|` below this is stable.
    pub stable: f64,
    /// Slope above this is diverging.
    pub diverging: f64,
}

impl Default for ScanThresholds {
    fn default() -> Self {
        Self {
            stable: 0.15,
            diverging: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Stable,
    Diverging,
    Inconclusive,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Diverging => "diverging",
            Classification::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub gamma: GammaParam,
    pub p: f64,
    pub q: f64,
    pub resolutions: Vec<usize>,
    pub estimates: Vec<MomentEstimate>,
    /// Least-squares slope of `ln estimate` against `ln n_cells`.
    pub slope: f64,
    pub classification: Classification,
    pub outside_validated_regime: bool,
}

impl ScanResult {
    pub const CSV_HEADER: &'static str =
        "gamma,p,q,n_cells,method,point_estimate,se,n_samples,n_excluded,unreliable,slope,classification";

    pub fn csv_rows(&self) -> Vec<String> {
        self.estimates
            .iter()
            .map(|e| {
                format!(
                    "{},{},{},{},{},{}",
                    self.gamma.value(),
                    self.p,
                    self.q,
                    e.csv_row(),
                    self.slope,
                    self.classification.as_str()
                )
            })
            .collect()
    }
}

pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn classify(slope: f64, t: &ScanThresholds) -> Classification {
    if !slope.is_finite() {
        Classification::Inconclusive
    } else if slope.abs() < t.stable {
        Classification::Stable
    } else if slope > t.diverging {
        Classification::Diverging
    } else {
        Classification::Inconclusive
    }
}

fn check_resolutions(resolutions: &[usize]) -> Result<()> {
    if resolutions.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a scan needs at least 3 resolutions, got {}",
            resolutions.len()
        )));
    }
    if resolutions[0] == 0 || resolutions.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::InvalidArgument(format!(
            "resolutions {resolutions:?} are not dyadically spaced"
        )));
    }
    Ok(())
}

/// Inputs shared by all points of a scan.
#[derive(Debug, Clone)]
pub struct ScanConfig<'a> {
    pub spec: &'a KernelSpec,
    pub opts: &'a AssemblyOptions,
    pub cache: Option<&'a CovarianceCache>,
    pub seed: u64,
    pub n_samples: usize,
    pub thresholds: ScanThresholds,
}

/// Raw-mean moment estimates across resolutions and the resulting slope class.
pub fn divergence_scan(
    query: &MomentQuery,
    resolutions: &[usize],
    cfg: &ScanConfig,
) -> Result<ScanResult> {
    Ok(grid_scan(query, &[(query.p, query.q)], resolutions, cfg)?.remove(0))
}

/// Scans every `(p, q)` of `grid` from one set of samples per resolution, so
/// each point matches a single-point scan with the same seed.
pub fn grid_scan(
    base: &MomentQuery,
    grid: &[(f64, f64)],
    resolutions: &[usize],
    cfg: &ScanConfig,
) -> Result<Vec<ScanResult>> {
    Ok(grid_scan_detailed(base, grid, resolutions, cfg)?.0)
}

/// [`grid_scan`] plus the repair report of the model at each resolution.
pub fn grid_scan_detailed(
    base: &MomentQuery,
    grid: &[(f64, f64)],
    resolutions: &[usize],
    cfg: &ScanConfig,
) -> Result<(Vec<ScanResult>, Vec<RepairReport>)> {
    check_resolutions(resolutions)?;
    let mut reports = Vec::with_capacity(resolutions.len());
    let mut per_point: Vec<Vec<MomentEstimate>> = vec![Vec::new(); grid.len()];
    for (ri, &n) in resolutions.iter().enumerate() {
        let setup = MomentSetup::new(&base.with_n_cells(n), cfg.spec, cfg.opts, cfg.cache)?;
        reports.push(*setup.model.repair_report());
        let masses = sample_map(
            &setup.model,
            cfg.seed,
            (ri as u64) << 32,
            cfg.n_samples,
            |s| setup.masses(&s.values),
        );
        for (k, &(p, q)) in grid.iter().enumerate() {
            let values: Vec<Option<f64>> = masses
                .iter()
                .map(|&(b, d)| finite(quotient(b, d, p, q).ok()))
                .collect();
            per_point[k].push(MomentEstimate::from_values(
                &values,
                EstimatorMethod::Mean,
                n,
            )?);
        }
    }
    let xs: Vec<f64> = resolutions.iter().map(|&n| n as f64).collect();
    let results = grid
        .iter()
        .zip(per_point)
        .map(|(&(p, q), estimates)| {
            let ys: Vec<f64> = estimates.iter().map(|e| e.point_estimate).collect();
            let slope = if ys.iter().all(|&y| y > 0.0) {
                log_log_slope(&xs, &ys)
            } else {
                f64::NAN
            };
            ScanResult {
                gamma: base.gamma,
                p,
                q,
                resolutions: resolutions.to_vec(),
                estimates,
                slope,
                classification: classify(slope, &cfg.thresholds),
                outside_validated_regime: p < 0.0 || q < 0.0,
            }
        })
        .collect();
    Ok((results, reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailIndexEstimate {
    pub hill_alpha: f64,
    pub k_order_stats: usize,
    /// Normal-approximation 95% interval `alpha (1 -+ 1.96 / sqrt(k))`.
    pub ci: (f64, f64),
    pub n_samples: usize,
    /// Estimate from the top `k / 4` order statistics.
    pub alpha_quarter: f64,
    /// False when the estimates at `k / 4` and `k` disagree beyond sampling noise.
    pub stable: bool,
}

impl TailIndexEstimate {
    pub const CSV_HEADER: &'static str =
        "hill_alpha,k_order_stats,ci_lo,ci_hi,n_samples,alpha_quarter,stable";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.hill_alpha,
            self.k_order_stats,
            self.ci.0,
            self.ci.1,
            self.n_samples,
            self.alpha_quarter,
            self.stable
        )
    }
}

/// `k / sum_{i <= k} ln(X_(i) / X_(k+1))` over descending order statistics.
fn hill(desc: &[f64], k: usize) -> f64 {
    let anchor = desc[k].ln();
    k as f64 / desc[..k].iter().map(|x| x.ln() - anchor).sum::<f64>()
}

/// z-score beyond which the `k / 4` and `k` estimates count as disagreeing.
const HILL_STABILITY_Z: f64 = 3.0;

pub fn hill_tail_index(samples: &[f64], k: usize) -> Result<TailIndexEstimate> {
    let n = samples.len();
    if k < 4 || k > n / 10 {
        return Err(Error::InsufficientSamples {
            needed: 10 * k.max(4),
            have: n,
        });
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "tail samples must be positive and finite, got {bad}"
        )));
    }
    let mut desc = samples.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let alpha = hill(&desc, k);
    let alpha_quarter = hill(&desc, k / 4);
    let half_width = 1.96 / (k as f64).sqrt();
    // The k/4 estimate reuses the top of the k sample, so their difference has
    // variance about alpha^2 (4/k - 1/k).
    let diff_sd = alpha * (3.0 / k as f64).sqrt();
    Ok(TailIndexEstimate {
        hill_alpha: alpha,
        k_order_stats: k,
        ci: (alpha * (1.0 - half_width), alpha * (1.0 + half_width)),
        n_samples: n,
        alpha_quarter,
        stable: (alpha_quarter - alpha).abs() <= HILL_STABILITY_Z * diff_sd,
    })
}
