//! Cell-centred lattices, covariance assembly, PSD repair and field sampling.
//!
//! Off-diagonal covariances are kernel evaluations between cell centres.
//! Diagonals use the regularized self-covariance `-ln(c h) - ln(2y) + g(z, z)`
//! for a bulk site and `-2 ln(c h) + g(x, x)` for a boundary site, which
//! shift by exactly `-2 ln r` when the region and spacing shrink by `r`.

pub mod cache;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{eval_boundary, eval_bulk, HalfPlanePoint, KernelSpec};
use crate::parallel;

/// Anything that can decide whether a lattice site belongs to it.
pub trait Region: Send + Sync {
    fn contains(&self, z: HalfPlanePoint) -> bool;
}

impl<F> Region for F
where
    F: Fn(HalfPlanePoint) -> bool + Send + Sync,
{
    fn contains(&self, z: HalfPlanePoint) -> bool {
        self(z)
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` in the closed upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let r = Self { x0, x1, y0, y1 };
        r.validate()?;
        Ok(r)
    }

    /// Carleson cube `[-r, r] x [0, 2r]`.
    pub fn carleson(r: f64) -> Result<Self> {
        Self::new(-r, r, 0.0, 2.0 * r)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.x0 < self.x1) || !(self.y0 < self.y1) || self.y0 < 0.0 {
            return Err(Error::InvalidRegion(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Image under `z -> r z`.
    pub fn scaled(&self, r: f64) -> Self {
        Self {
            x0: r * self.x0,
            x1: r * self.x1,
            y0: r * self.y0,
            y1: r * self.y1,
        }
    }

    pub fn projection(&self) -> Interval {
        Interval {
            a: self.x0,
            b: self.x1,
        }
    }
}

impl Region for Rect {
    fn contains(&self, z: HalfPlanePoint) -> bool {
        z.x >= self.x0 && z.x <= self.x1 && z.y >= self.y0 && z.y <= self.y1
    }
}

/// Closed boundary interval `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() || !(a < b) {
            return Err(Error::InvalidRegion(format!("interval [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn is_empty(&self) -> bool {
        !(self.a < self.b)
    }

    pub fn scaled(&self, r: f64) -> Self {
        Self {
            a: r * self.a,
            b: r * self.b,
        }
    }

    pub fn contains_x(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }
}

impl Region for Interval {
    fn contains(&self, z: HalfPlanePoint) -> bool {
        z.y == 0.0 && self.contains_x(z.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LatticeRegion {
    Bulk(Rect),
    Boundary(Interval),
}

impl From<Rect> for LatticeRegion {
    fn from(r: Rect) -> Self {
        LatticeRegion::Bulk(r)
    }
}

impl From<Interval> for LatticeRegion {
    fn from(i: Interval) -> Self {
        LatticeRegion::Boundary(i)
    }
}

/// Cell-centred lattice over a rectangle or a boundary interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub region: LatticeRegion,
    /// Cells across the x-extent.
    pub n_cells: usize,
    /// Cells along y (1 for a boundary lattice).
    pub n_rows: usize,
    pub h: f64,
    pub sites: Vec<HalfPlanePoint>,
    /// `h^2` for bulk lattices, `h` for boundary lattices.
    pub cell_measure: f64,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self.region, LatticeRegion::Boundary(_))
    }
}

/// Places sites at cell centres. A bulk rectangle gets `n_cells` square
/// cells across its width and as many rows as fit its height.
pub fn build_lattice(region: impl Into<LatticeRegion>, n_cells: usize) -> Result<Lattice> {
    if n_cells == 0 {
        return Err(Error::InvalidArgument("n_cells must be at least 1".into()));
    }
    let region = region.into();
    match region {
        LatticeRegion::Boundary(iv) => {
            Interval::new(iv.a, iv.b)?;
            let h = iv.len() / n_cells as f64;
            let sites = (0..n_cells)
                .map(|i| HalfPlanePoint::boundary(iv.a + (i as f64 + 0.5) * h))
                .collect();
            Ok(Lattice {
                region,
                n_cells,
                n_rows: 1,
                h,
                sites,
                cell_measure: h,
            })
        }
        LatticeRegion::Bulk(rect) => {
            rect.validate()?;
            let h = rect.width() / n_cells as f64;
            let ratio = rect.height() * n_cells as f64 / rect.width();
            let rows = ratio.round();
            if rows < 1.0 || (ratio - rows).abs() > 1e-9 * ratio.max(1.0) {
                return Err(Error::NonSquareCells { n_cells, ratio });
            }
            let n_rows = rows as usize;
            let mut sites = Vec::with_capacity(n_rows * n_cells);
            for j in 0..n_rows {
                let y = rect.y0 + (j as f64 + 0.5) * h;
                for i in 0..n_cells {
                    sites.push(HalfPlanePoint {
                        x: rect.x0 + (i as f64 + 0.5) * h,
                        y,
                    });
                }
            }
            Ok(Lattice {
                region,
                n_cells,
                n_rows,
                h,
                sites,
                cell_measure: h * h,
            })
        }
    }
}

/// `c = e^{-3/2}`: the mean of `-ln|U - V|` for independent uniform points of
/// a unit cell is `3/2`, so this constant matches the cell-averaged kernel.
pub const DEFAULT_DIAG_CONSTANT: f64 = 0.223_130_160_148_429_83;
pub const DEFAULT_REPAIR_BUDGET: f64 = 0.01;
pub const MAX_DENSE_SITES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub diag_constant: f64,
    /// Allowed Frobenius change of PSD repair, relative to the original norm.
    pub repair_budget: f64,
    pub max_sites: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            diag_constant: DEFAULT_DIAG_CONSTANT,
            repair_budget: DEFAULT_REPAIR_BUDGET,
            max_sites: MAX_DENSE_SITES,
        }
    }
}

impl AssemblyOptions {
    pub fn with_diag_constant(c: f64) -> Self {
        Self {
            diag_constant: c,
            ..Self::default()
        }
    }
}

/// Bulk sites come first, boundary sites after them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteLayout {
    pub n_bulk: usize,
    pub n_boundary: usize,
}

impl SiteLayout {
    pub fn len(&self) -> usize {
        self.n_bulk + self.n_boundary
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn boundary_offset(&self) -> usize {
        self.n_bulk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorKind {
    Cholesky,
    EigenClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub clipped_eigenvalue_count: usize,
    /// `||M - M_repaired||_F`.
    pub frobenius_change: f64,
    /// `frobenius_change / ||M||_F`.
    pub relative_change: f64,
    pub factor: FactorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Factor {
    /// Row-major packed lower triangle: row `i` holds `i + 1` entries.
    Lower(Vec<f64>),
    /// Row-major square matrix.
    Dense(Vec<f64>),
}

/// Repaired covariance over all sites plus a factor `F` with `F F^T = M`.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    matrix: DMatrix<f64>,
    diag: Vec<f64>,
    factor: Factor,
    layout: SiteLayout,
    diag_constant: f64,
    bulk_h: f64,
    boundary_h: f64,
    report: RepairReport,
}

impl CovarianceModel {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> SiteLayout {
        self.layout
    }

    pub fn diag_constant(&self) -> f64 {
        self.diag_constant
    }

    pub fn bulk_spacing(&self) -> f64 {
        self.bulk_h
    }

    pub fn boundary_spacing(&self) -> f64 {
        self.boundary_h
    }

    pub fn repair_report(&self) -> &RepairReport {
        &self.report
    }

    /// Per-site variances of the repaired matrix.
    pub fn variances(&self) -> &[f64] {
        &self.diag
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// Dense `F` with `F F^T` equal to the repaired matrix.
    pub fn factor_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        match &self.factor {
            Factor::Lower(p) => {
                DMatrix::from_fn(
                    n,
                    n,
                    |i, j| if j <= i { p[i * (i + 1) / 2 + j] } else { 0.0 },
                )
            }
            Factor::Dense(d) => DMatrix::from_fn(n, n, |i, j| d[i * n + j]),
        }
    }

    /// Smallest eigenvalue of the repaired matrix (full eigen-decomposition).
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }

    /// Builds a model directly from a symmetric matrix, repairing and factoring it.
    pub fn from_matrix(
        matrix: DMatrix<f64>,
        layout: SiteLayout,
        repair_budget: f64,
    ) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch(matrix.nrows(), matrix.ncols()));
        }
        if matrix.nrows() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                got: matrix.nrows(),
            });
        }
        let (matrix, factor, report) = repair_and_factor(matrix, repair_budget)?;
        let diag = matrix.diagonal().iter().copied().collect();
        Ok(Self {
            matrix,
            diag,
            factor,
            layout,
            diag_constant: f64::NAN,
            bulk_h: f64::NAN,
            boundary_h: f64::NAN,
            report,
        })
    }

    pub(crate) fn from_parts(
        matrix: DMatrix<f64>,
        factor: Factor,
        layout: SiteLayout,
        diag_constant: f64,
        bulk_h: f64,
        boundary_h: f64,
        report: RepairReport,
    ) -> Self {
        let diag = matrix.diagonal().iter().copied().collect();
        Self {
            matrix,
            diag,
            factor,
            layout,
            diag_constant,
            bulk_h,
            boundary_h,
            report,
        }
    }

    pub(crate) fn factor(&self) -> &Factor {
        &self.factor
    }
}

/// Assembles, repairs and factors the covariance of `bulk` and `boundary`
/// sites under `spec`. Either lattice may be absent.
pub fn assemble_covariance(
    bulk: Option<&Lattice>,
    boundary: Option<&Lattice>,
    spec: &KernelSpec,
    opts: &AssemblyOptions,
) -> Result<CovarianceModel> {
    let matrix = assemble_matrix(bulk, boundary, spec, opts)?;
    let layout = SiteLayout {
        n_bulk: bulk.map_or(0, |l| l.len()),
        n_boundary: boundary.map_or(0, |l| l.len()),
    };
    let (matrix, factor, report) = repair_and_factor(matrix, opts.repair_budget)?;
    Ok(CovarianceModel::from_parts(
        matrix,
        factor,
        layout,
        opts.diag_constant,
        bulk.map_or(f64::NAN, |l| l.h),
        boundary.map_or(f64::NAN, |l| l.h),
        report,
    ))
}

/// Unrepaired covariance matrix, bulk sites first.
pub fn assemble_matrix(
    bulk: Option<&Lattice>,
    boundary: Option<&Lattice>,
    spec: &KernelSpec,
    opts: &AssemblyOptions,
) -> Result<DMatrix<f64>> {
    if let Some(l) = bulk {
        if l.is_boundary() {
            return Err(Error::InvalidRegion(
                "bulk lattice built on an interval".into(),
            ));
        }
    }
    if let Some(l) = boundary {
        if !l.is_boundary() {
            return Err(Error::InvalidRegion(
                "boundary lattice built on a rectangle".into(),
            ));
        }
    }
    let c = opts.diag_constant;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "diagonal constant {c} must be positive"
        )));
    }
    let n_bulk = bulk.map_or(0, |l| l.len());
    let sites: Vec<HalfPlanePoint> = bulk
        .iter()
        .chain(boundary.iter())
        .flat_map(|l| l.sites.iter().copied())
        .collect();
    let n = sites.len();
    if n > opts.max_sites {
        return Err(Error::TooManySites {
            sites: n,
            cap: opts.max_sites,
        });
    }
    for z in &sites {
        spec.check_domain(z)?;
    }
    let bulk_h = bulk.map_or(f64::NAN, |l| l.h);
    let boundary_h = boundary.map_or(f64::NAN, |l| l.h);

    let entry = |i: usize, j: usize| -> Result<f64> {
        let (z, w) = (sites[i], sites[j]);
        if i == j {
            let g = spec.correction_at(z, z);
            return Ok(if i < n_bulk {
                -(c * bulk_h).ln() - (2.0 * z.y).ln() + g
            } else {
                -2.0 * (c * boundary_h).ln() + g
            });
        }
        if i >= n_bulk && j >= n_bulk {
            eval_boundary(spec, z.x, w.x)
        } else {
            eval_bulk(spec, z, w)
        }
    };

    let rows: Vec<Vec<f64>> = parallel::pool().install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| entry(i, j)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()
    })?;
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + k;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Cholesky when the matrix is positive definite; otherwise clip negative
/// eigenvalues within the Frobenius budget.
fn repair_and_factor(
    matrix: DMatrix<f64>,
    budget: f64,
) -> Result<(DMatrix<f64>, Factor, RepairReport)> {
    let n = matrix.nrows();
    if let Some(chol) = matrix.clone().cholesky() {
        let l = chol.unpack();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                packed.push(l[(i, j)]);
            }
        }
        let report = RepairReport {
            clipped_eigenvalue_count: 0,
            frobenius_change: 0.0,
            relative_change: 0.0,
            factor: FactorKind::Cholesky,
        };
        return Ok((matrix, Factor::Lower(packed), report));
    }

    let norm = matrix.norm();
    let eig = SymmetricEigen::new(matrix);
    let mut clipped = 0usize;
    let mut change2 = 0.0;
    let lambda: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < 0.0 {
                clipped += 1;
                change2 += l * l;
                0.0
            } else {
                l
            }
        })
        .collect();
    let change = change2.sqrt();
    let relative = if norm > 0.0 { change / norm } else { 0.0 };
    if relative > budget {
        return Err(Error::RepairTooLarge {
            change: relative,
            budget,
        });
    }
    let v = &eig.eigenvectors;
    let mut dense = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            dense[i * n + k] = v[(i, k)] * lambda[k].sqrt();
        }
    }
    let mut repaired = DMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| v[(i, k)] * lambda[k] * v[(j, k)])
            .sum::<f64>()
    });
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (repaired[(i, j)] + repaired[(j, i)]);
            repaired[(i, j)] = s;
            repaired[(j, i)] = s;
        }
    }
    let report = RepairReport {
        clipped_eigenvalue_count: clipped,
        frobenius_change: change,
        relative_change: relative,
        factor: FactorKind::EigenClip,
    };
    Ok((repaired, Factor::Dense(dense), report))
}

/// ChaCha8 stream identified by `(master_seed, stream_index)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// One realization of the field on every site of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
    pub layout: SiteLayout,
}

impl FieldSample {
    pub fn bulk_values(&self) -> &[f64] {
        &self.values[..self.layout.n_bulk]
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.values[self.layout.n_bulk..]
    }
}

pub fn sample_field(model: &CovarianceModel, rng: &mut RngStream) -> FieldSample {
    sample_batch(model, rng, 1).pop().expect("one sample")
}

/// Draws `count` samples; identical to `count` successive [`sample_field`] calls.
pub fn sample_batch(
    model: &CovarianceModel,
    rng: &mut RngStream,
    count: usize,
) -> Vec<FieldSample> {
    let n = model.dim();
    let mut z = vec![0.0; n * count];
    rng.fill_normal(&mut z);
    let values = apply_factor(model.factor(), n, &z, count);
    values
        .into_iter()
        .map(|values| FieldSample {
            values,
            variances: model.diag.clone(),
            layout: model.layout,
        })
        .collect()
}

/// Samples per RNG stream in [`sample_map`].
pub const SAMPLE_CHUNK: usize = 64;

/// Maps `f` over `n_samples` field samples in parallel. Chunk `k` of
/// [`SAMPLE_CHUNK`] samples uses stream `stream_base + k`; results come back
/// in sample order whatever the worker count.
pub fn sample_map<T, F>(
    model: &CovarianceModel,
    master_seed: u64,
    stream_base: u64,
    n_samples: usize,
    f: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(&FieldSample) -> T + Sync,
{
    let chunks = n_samples.div_ceil(SAMPLE_CHUNK);
    let per_chunk: Vec<Vec<T>> = parallel::pool().install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|k| {
                let count = SAMPLE_CHUNK.min(n_samples - k * SAMPLE_CHUNK);
                let mut rng = RngStream::new(master_seed, stream_base.wrapping_add(k as u64));
                sample_batch(model, &mut rng, count)
                    .iter()
                    .map(&f)
                    .collect()
            })
            .collect()
    });
    per_chunk.into_iter().flatten().collect()
}

/// `out[b] = F z[b]` with every output accumulated in increasing column order,
/// so results do not depend on the batch size.
fn apply_factor(factor: &Factor, n: usize, z: &[f64], count: usize) -> Vec<Vec<f64>> {
    let mut zt = vec![0.0; n * count];
    for b in 0..count {
        for j in 0..n {
            zt[j * count + b] = z[b * n + j];
        }
    }
    let mut out = vec![vec![0.0; n]; count];
    let mut acc = vec![0.0; count];
    for i in 0..n {
        let row: &[f64] = match factor {
            Factor::Lower(p) => &p[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1],
            Factor::Dense(d) => &d[i * n..(i + 1) * n],
        };
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (j, &l) in row.iter().enumerate() {
            let zj = &zt[j * count..(j + 1) * count];
            for (a, &zz) in acc.iter_mut().zip(zj) {
                *a += l * zz;
            }
        }
        for (b, &a) in acc.iter().enumerate() {
            out[b][i] = a;
        }
    }
    out
}

/// Adds a deterministic per-site shift; variances are unchanged.
pub fn shift_field(sample: &FieldSample, shift: &[f64]) -> Result<FieldSample> {
    if shift.len() != sample.values.len() {
        return Err(Error::LengthMismatch {
            expected: sample.values.len(),
            got: shift.len(),
        });
    }
    let mut out = sample.clone();
    for (v, s) in out.values.iter_mut().zip(shift) {
        *v += s;
    }
    Ok(out)
}
