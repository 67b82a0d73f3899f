//! Gaussian comparison on finite vectors of normalized exponentials.
//!
//! For covariances `A`, `B` and `C_t = (1 - t) A + t B`, let
//! `W_i(t) = exp(Z_i - C_t[i,i] / 2)` with `Z ~ N(0, C_t)` and
//! `phi(t) = E[G(W(t))]`. Then
//! `phi'(t) = 1/2 sum_ij E[d_ij G(W) W_i W_j] (B_ij - A_ij)`,
//! so `phi(0) <= phi(1)` whenever every term `(B_ij - A_ij) d_ij G` is
//! nonnegative. This module evaluates both sides by closed form, tensor
//! Gauss-Hermite quadrature or Monte Carlo, and builds the covariance
//! modifications used to decouple bulk and boundary blocks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::RngStream;

/// Relative tolerance for PSD checks.
const PSD_TOL: f64 = 1e-10;

/// Covariance of a centred Gaussian vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVectorSpec {
    covariance: DMatrix<f64>,
}

impl GaussianVectorSpec {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        check_square(&covariance)?;
        if covariance != covariance.transpose() {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        if !is_psd(&covariance) {
            return Err(Error::InvalidArgument(
                "covariance is not positive semidefinite".into(),
            ));
        }
        Ok(Self { covariance })
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
    }
    Ok(())
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    check_square(a)?;
    check_square(b)?;
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(a.nrows(), b.nrows()));
    }
    Ok(a.nrows())
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax();
    eig.eigenvalues.min() >= -PSD_TOL * scale.max(f64::MIN_POSITIVE)
}

/// `(1 - t) A + t B`.
pub fn interpolate(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_pair(a, b)?;
    Ok(a * (1.0 - t) + b * t)
}

/// `E[prod W_i^k_i] = exp((k^T C k - k^T diag C) / 2)` for real exponents.
pub fn normalized_exponential_moment(c: &DMatrix<f64>, k: &[f64]) -> Result<f64> {
    check_square(c)?;
    if k.len() != c.nrows() {
        return Err(Error::DimensionMismatch(k.len(), c.nrows()));
    }
    let kv = DVector::from_column_slice(k);
    let quad = (kv.transpose() * c * &kv)[(0, 0)];
    let lin: f64 = k.iter().enumerate().map(|(i, ki)| ki * c[(i, i)]).sum();
    Ok((0.5 * (quad - lin)).exp())
}

pub type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type HessianFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// The functional `G` applied to the vector of normalized exponentials.
#[derive(Clone)]
pub enum FunctionalSpec {
    /// `prod x_i^k_i`.
    Monomial(Vec<f64>),
    /// `(sum x_i)^p`.
    PowerSum { p: f64 },
    /// `(sum_{i in N} x_i)^p / (sum_{j in D} x_j)^q` over disjoint index sets.
    Quotient {
        numerator: Vec<usize>,
        denominator: Vec<usize>,
        p: f64,
        q: f64,
    },
    /// User functional with its matrix of second partials.
    Custom {
        name: String,
        value: Arc<ValueFn>,
        hessian: Arc<HessianFn>,
    },
}

impl fmt::Debug for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalSpec::Monomial(k) => write!(f, "Monomial({k:?})"),
            FunctionalSpec::PowerSum { p } => write!(f, "PowerSum({p})"),
            FunctionalSpec::Quotient {
                numerator,
                denominator,
                p,
                q,
            } => {
                write!(f, "Quotient({numerator:?}^{p} / {denominator:?}^{q})")
            }
            FunctionalSpec::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl FunctionalSpec {
    /// `x_0^p / x_1^q`.
    pub fn simple_quotient(p: f64, q: f64) -> Self {
        FunctionalSpec::Quotient {
            numerator: vec![0],
            denominator: vec![1],
            p,
            q,
        }
    }

    pub fn custom<V, H>(name: impl Into<String>, value: V, hessian: H) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        FunctionalSpec::Custom {
            name: name.into(),
            value: Arc::new(value),
            hessian: Arc::new(hessian),
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, FunctionalSpec::Custom { .. })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            FunctionalSpec::Monomial(k) if k.len() != n => {
                Err(Error::DimensionMismatch(k.len(), n))
            }
            FunctionalSpec::Quotient {
                numerator,
                denominator,
                ..
            } => {
                let all = numerator.iter().chain(denominator);
                if let Some(&bad) = all.clone().find(|&&i| i >= n) {
                    return Err(Error::IndexOutOfRange { index: bad, len: n });
                }
                if numerator.iter().any(|i| denominator.contains(i)) {
                    return Err(Error::InvalidArgument(
                        "numerator and denominator overlap".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FunctionalSpec::Monomial(k) => x.iter().zip(k).map(|(xi, ki)| xi.powf(*ki)).product(),
            FunctionalSpec::PowerSum { p } => x.iter().sum::<f64>().powf(*p),
            FunctionalSpec::Quotient {
                numerator,
                denominator,
                p,
                q,
            } => {
                let s: f64 = numerator.iter().map(|&i| x[i]).sum();
                let d: f64 = denominator.iter().map(|&j| x[j]).sum();
                s.powf(*p) * d.powf(-*q)
            }
            FunctionalSpec::Custom { value, .. } => value(x),
        }
    }

    /// Matrix of second partials at `x` in the open positive orthant.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        match self {
            FunctionalSpec::Monomial(k) => {
                let g = self.eval(x);
                DMatrix::from_fn(n, n, |i, j| {
                    let m = if i == j {
                        k[i] * (k[i] - 1.0)
                    } else {
                        k[i] * k[j]
                    };
                    m * g / (x[i] * x[j])
                })
            }
            FunctionalSpec::PowerSum { p } => {
                let s: f64 = x.iter().sum();
                DMatrix::from_element(n, n, p * (p - 1.0) * s.powf(p - 2.0))
            }
            FunctionalSpec::Quotient {
                numerator,
                denominator,
                p,
                q,
            } => {
                let s: f64 = numerator.iter().map(|&i| x[i]).sum();
                let d: f64 = denominator.iter().map(|&j| x[j]).sum();
                let nn = p * (p - 1.0) * s.powf(p - 2.0) * d.powf(-q);
                let dd = q * (q + 1.0) * s.powf(*p) * d.powf(-q - 2.0);
                let nd = -p * q * s.powf(p - 1.0) * d.powf(-q - 1.0);
                DMatrix::from_fn(n, n, |i, j| match (self.side(i), self.side(j)) {
                    (Side::Num, Side::Num) => nn,
                    (Side::Den, Side::Den) => dd,
                    (Side::Num, Side::Den) | (Side::Den, Side::Num) => nd,
                    _ => 0.0,
                })
            }
            FunctionalSpec::Custom { hessian, .. } => hessian(x),
        }
    }

    fn side(&self, i: usize) -> Side {
        match self {
            FunctionalSpec::Quotient {
                numerator,
                denominator,
                ..
            } => {
                if numerator.contains(&i) {
                    Side::Num
                } else if denominator.contains(&i) {
                    Side::Den
                } else {
                    Side::Neither
                }
            }
            _ => Side::Neither,
        }
    }

    /// Sign of `d_ij G`, constant over the positive orthant for analytic kinds.
    pub fn analytic_sign(&self, i: usize, j: usize) -> Option<f64> {
        let v = match self {
            FunctionalSpec::Monomial(k) => {
                if i == j {
                    k[i] * (k[i] - 1.0)
                } else {
                    k[i] * k[j]
                }
            }
            FunctionalSpec::PowerSum { p } => p * (p - 1.0),
            FunctionalSpec::Quotient { p, q, .. } => match (self.side(i), self.side(j)) {
                (Side::Num, Side::Num) => p * (p - 1.0),
                (Side::Den, Side::Den) => q * (q + 1.0),
                (Side::Num, Side::Den) | (Side::Den, Side::Num) => -p * q,
                _ => 0.0,
            },
            FunctionalSpec::Custom { .. } => return None,
        };
        Some(v.signum() * (v != 0.0) as u8 as f64)
    }

    /// Exponents `k` when `G` is a single monomial in `n` variables.
    pub fn monomial_exponents(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            FunctionalSpec::Monomial(k) => Some(k.clone()),
            FunctionalSpec::Quotient {
                numerator,
                denominator,
                p,
                q,
            } => {
                let single =
                    |v: &Vec<usize>, e: f64| v.len() == 1 || (v.is_empty() && e == 0.0) || e == 0.0;
                if !single(numerator, *p) || !single(denominator, *q) {
                    return None;
                }
                let mut k = vec![0.0; n];
                if *p != 0.0 {
                    k[numerator[0]] = *p;
                }
                if *q != 0.0 {
                    k[denominator[0]] = -*q;
                }
                Some(k)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Num,
    Den,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignConditionReport {
    /// Entry `(i, j)` holds when `(B_ij - A_ij) d_ij G >= 0` everywhere checked.
    pub ok: Vec<Vec<bool>>,
    /// True for analytic functionals; false when only probe points were checked.
    pub proven: bool,
}

impl SignConditionReport {
    pub fn all_ok(&self) -> bool {
        self.ok.iter().flatten().all(|&b| b)
    }
}

/// Logarithmic grid on `[1e-3, 1e3]^n` with 9 points per axis.
pub fn default_probe_points(n: usize) -> Result<Vec<Vec<f64>>> {
    if n > 5 {
        return Err(Error::InvalidArgument(format!(
            "probe grid for dimension {n} is too large"
        )));
    }
    let axis: Vec<f64> = (0..9).map(|i| 10f64.powf(-3.0 + 0.75 * i as f64)).collect();
    let mut pts = vec![vec![]];
    for _ in 0..n {
        pts = pts
            .into_iter()
            .flat_map(|p| axis.iter().map(move |&a| [p.clone(), vec![a]].concat()))
            .collect();
    }
    Ok(pts)
}

/// Checks the sign condition analytically, or at probe points for user functionals.
pub fn sign_condition(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g: &FunctionalSpec,
    probes: Option<&[Vec<f64>]>,
) -> Result<SignConditionReport> {
    let n = check_pair(a, b)?;
    g.validate(n)?;
    let diff = b - a;
    if g.is_analytic() {
        let ok = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| diff[(i, j)] * g.analytic_sign(i, j).expect("analytic") >= 0.0)
                    .collect()
            })
            .collect();
        return Ok(SignConditionReport { ok, proven: true });
    }
    let default;
    let probes = match probes {
        Some(p) => p,
        None => {
            default = default_probe_points(n)?;
            &default
        }
    };
    let mut ok = vec![vec![true; n]; n];
    for x in probes {
        if x.len() != n || x.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "probe points must lie in the positive orthant".into(),
            ));
        }
        let h = g.hessian(x);
        for i in 0..n {
            for j in 0..n {
                if diff[(i, j)] * h[(i, j)] < 0.0 {
                    ok[i][j] = false;
                }
            }
        }
    }
    Ok(SignConditionReport { ok, proven: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Quadrature { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Method {
    pub fn quadrature() -> Self {
        Method::Quadrature { nodes: 64 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Quadrature { .. } => "quadrature",
            Method::MonteCarlo { .. } => "monte-carlo",
        }
    }
}

/// An expectation with its Monte Carlo standard error, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub se: Option<f64>,
}

impl Expectation {
    fn exact(value: f64) -> Self {
        Self { value, se: None }
    }
}

/// Gauss-Hermite nodes and weights for the weight `exp(-x^2)` (Golub-Welsch).
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            (
                eig.eigenvalues[k],
                sqrt_pi * eig.eigenvectors[(0, k)].powi(2),
            )
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `L` with `L L^T = C` for a PSD `C`.
fn psd_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.unpack());
    }
    if !is_psd(c) {
        return Err(Error::NonIntegrable(
            "interpolated covariance is not positive semidefinite".into(),
        ));
    }
    let eig = SymmetricEigen::new(c.clone());
    let n = c.nrows();
    Ok(DMatrix::from_fn(n, n, |i, k| {
        eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt()
    }))
}

fn normalized(z: &[f64], c: &DMatrix<f64>) -> Vec<f64> {
    z.iter()
        .enumerate()
        .map(|(i, zi)| (zi - 0.5 * c[(i, i)]).exp())
        .collect()
}

/// `E[f(W)]` under `N(0, c)` by tensor Gauss-Hermite quadrature.
fn quadrature<F: Fn(&[f64]) -> f64>(c: &DMatrix<f64>, nodes: usize, f: F) -> Result<f64> {
    let n = c.nrows();
    if n > 3 {
        return Err(Error::InvalidArgument(format!(
            "quadrature supports at most 3 dimensions, got {n}"
        )));
    }
    if nodes < 64 {
        return Err(Error::InvalidArgument(format!(
            "quadrature needs at least 64 nodes, got {nodes}"
        )));
    }
    let l = psd_sqrt(c)?;
    let (x, w) = gauss_hermite(nodes);
    let norm = std::f64::consts::PI.powf(-(n as f64) / 2.0);
    let total = nodes.pow(n as u32);
    let mut idx = vec![0usize; n];
    let mut u = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut acc = 0.0;
    for _ in 0..total {
        let mut weight = norm;
        for (d, &k) in idx.iter().enumerate() {
            u[d] = std::f64::consts::SQRT_2 * x[k];
            weight *= w[k];
        }
        for i in 0..n {
            z[i] = (0..=i.max(n - 1)).map(|j| l[(i, j)] * u[j]).sum();
        }
        acc += weight * f(&normalized(&z, c));
        for d in idx.iter_mut() {
            *d += 1;
            if *d < nodes {
                break;
            }
            *d = 0;
        }
    }
    Ok(acc)
}

/// Monte Carlo draws of `W(t)` coupled as `Z = sqrt(1 - t) A + sqrt(t) B`.
struct CoupledSampler {
    la: DMatrix<f64>,
    lb: DMatrix<f64>,
    draws: Vec<(Vec<f64>, Vec<f64>)>,
}

impl CoupledSampler {
    fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, samples: usize, seed: u64) -> Result<Self> {
        let n = a.nrows();
        let la = psd_sqrt(a)?;
        let lb = psd_sqrt(b)?;
        let mut rng = RngStream::new(seed, 0);
        let mut draws = Vec::with_capacity(samples);
        let mut buf = vec![0.0; 2 * n];
        for _ in 0..samples {
            rng.fill_normal(&mut buf);
            let xa = &la * DVector::from_column_slice(&buf[..n]);
            let xb = &lb * DVector::from_column_slice(&buf[n..]);
            draws.push((xa.iter().copied().collect(), xb.iter().copied().collect()));
        }
        Ok(Self { la, lb, draws })
    }

    fn w(&self, k: usize, t: f64, c: &DMatrix<f64>) -> Vec<f64> {
        let (xa, xb) = &self.draws[k];
        let z: Vec<f64> = xa
            .iter()
            .zip(xb)
            .map(|(a, b)| (1.0 - t).sqrt() * a + t.sqrt() * b)
            .collect();
        normalized(&z, c)
    }

    fn mean_se<F: Fn(usize) -> f64>(&self, f: F) -> Expectation {
        let n = self.draws.len() as f64;
        let vals: Vec<f64> = (0..self.draws.len()).map(f).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Expectation {
            value: mean,
            se: Some((var / n).sqrt()),
        }
    }

    #[allow(dead_code)]
    fn factors(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.la, &self.lb)
    }
}

fn integrability_gate(c: &DMatrix<f64>, g: &FunctionalSpec) -> Result<()> {
    if let Some(k) = g.monomial_exponents(c.nrows()) {
        let m = normalized_exponential_moment(c, &k)?;
        if !m.is_finite() {
            return Err(Error::NonIntegrable(format!(
                "closed-form moment {m} for {g:?}"
            )));
        }
    }
    if matches!(g, FunctionalSpec::Quotient { .. }) && !is_psd(c) {
        return Err(Error::NonIntegrable(
            "covariance is not positive semidefinite".into(),
        ));
    }
    Ok(())
}

/// `phi(t) = E[G(W(t))]`.
pub fn phi(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g: &FunctionalSpec,
    t: f64,
    method: Method,
) -> Result<Expectation> {
    let n = check_pair(a, b)?;
    g.validate(n)?;
    let c = interpolate(a, b, t)?;
    integrability_gate(&c, g)?;
    match method {
        Method::ClosedForm => {
            let k = g
                .monomial_exponents(n)
                .ok_or_else(|| Error::InvalidArgument(format!("no closed form for {g:?}")))?;
            Ok(Expectation::exact(normalized_exponential_moment(&c, &k)?))
        }
        Method::Quadrature { nodes } => {
            Ok(Expectation::exact(quadrature(&c, nodes, |w| g.eval(w))?))
        }
        Method::MonteCarlo { samples, seed } => {
            let s = CoupledSampler::new(a, b, samples, seed)?;
            Ok(s.mean_se(|k| g.eval(&s.w(k, t, &c))))
        }
    }
}

/// Both sides of the derivative identity at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiPrime {
    pub identity_value: f64,
    pub finite_difference_value: f64,
    pub identity_se: Option<f64>,
    pub finite_difference_se: Option<f64>,
}

impl PhiPrime {
    pub fn discrepancy(&self) -> f64 {
        (self.identity_value - self.finite_difference_value).abs()
    }
}

pub const FD_STEP: f64 = 1e-4;

/// Right side of the derivative identity, and `(phi(t + d) - phi(t - d)) / 2d`.
pub fn phi_prime_identity(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g: &FunctionalSpec,
    t: f64,
    method: Method,
) -> Result<PhiPrime> {
    let n = check_pair(a, b)?;
    g.validate(n)?;
    let diff = b - a;
    let c = interpolate(a, b, t)?;
    integrability_gate(&c, g)?;
    let term = |w: &[f64]| -> f64 {
        let h = g.hessian(w);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += h[(i, j)] * w[i] * w[j] * diff[(i, j)];
            }
        }
        0.5 * s
    };
    match method {
        Method::ClosedForm => {
            let k = g
                .monomial_exponents(n)
                .ok_or_else(|| Error::InvalidArgument(format!("no closed form for {g:?}")))?;
            let phi_t = normalized_exponential_moment(&c, &k)?;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let m = k[i] * k[j] - if i == j { k[i] } else { 0.0 };
                    s += m * diff[(i, j)];
                }
            }
            let fd = (phi(a, b, g, t + FD_STEP, method)?.value
                - phi(a, b, g, t - FD_STEP, method)?.value)
                / (2.0 * FD_STEP);
            Ok(PhiPrime {
                identity_value: 0.5 * phi_t * s,
                finite_difference_value: fd,
                identity_se: None,
                finite_difference_se: None,
            })
        }
        Method::Quadrature { nodes } => {
            let id = quadrature(&c, nodes, term)?;
            let fd = (phi(a, b, g, t + FD_STEP, method)?.value
                - phi(a, b, g, t - FD_STEP, method)?.value)
                / (2.0 * FD_STEP);
            Ok(PhiPrime {
                identity_value: id,
                finite_difference_value: fd,
                identity_se: None,
                finite_difference_se: None,
            })
        }
        Method::MonteCarlo { samples, seed } => {
            let s = CoupledSampler::new(a, b, samples, seed)?;
            let id = s.mean_se(|k| term(&s.w(k, t, &c)));
            let (tp, tm) = (t + FD_STEP, t - FD_STEP);
            let (cp, cm) = (interpolate(a, b, tp)?, interpolate(a, b, tm)?);
            let fd = s.mean_se(|k| {
                (g.eval(&s.w(k, tp, &cp)) - g.eval(&s.w(k, tm, &cm))) / (2.0 * FD_STEP)
            });
            Ok(PhiPrime {
                identity_value: id.value,
                finite_difference_value: fd.value,
                identity_se: id.se,
                finite_difference_se: fd.se,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KahaneReport {
    pub sign_condition_ok: Vec<Vec<bool>>,
    /// False when the sign condition fails somewhere; both sides are still computed.
    pub applicable: bool,
    pub sign_condition_proven: bool,
    /// Growth hypotheses are not checked for user functionals.
    pub unverified_hypothesis: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub inequality_holds: bool,
    pub method: String,
    pub standard_error: Option<f64>,
}

/// Computes `phi(0)` and `phi(1)` and compares them.
pub fn verify_inequality(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g: &FunctionalSpec,
    method: Method,
) -> Result<KahaneReport> {
    let sign = sign_condition(a, b, g, None)?;
    let lhs = phi(a, b, g, 0.0, method)?;
    let rhs = phi(a, b, g, 1.0, method)?;
    let (holds, se) = match (lhs.se, rhs.se) {
        (Some(sl), Some(sr)) => {
            let se = (sl * sl + sr * sr).sqrt();
            (lhs.value <= rhs.value + 3.0 * se, Some(se))
        }
        _ => (lhs.value <= rhs.value * (1.0 + 1e-12) + 1e-300, None),
    };
    Ok(KahaneReport {
        applicable: sign.all_ok(),
        sign_condition_ok: sign.ok,
        sign_condition_proven: sign.proven,
        unverified_hypothesis: !g.is_analytic(),
        lhs: lhs.value,
        rhs: rhs.value,
        inequality_holds: holds,
        method: method.name().into(),
        standard_error: se,
    })
}

/// A pair of covariances with a functional.
#[derive(Debug, Clone)]
pub struct KahaneInstance {
    pub cov_a: DMatrix<f64>,
    pub cov_b: DMatrix<f64>,
    pub functional: FunctionalSpec,
    pub method: Method,
}

pub const PRESETS: &[&str] = &["monomial-2d", "power-sum-convex", "quotient-decorrelation"];

/// Named instances for the command line.
pub fn preset(name: &str) -> Option<KahaneInstance> {
    let id2 = DMatrix::identity(2, 2);
    match name {
        "monomial-2d" => Some(KahaneInstance {
            cov_a: id2,
            cov_b: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            functional: FunctionalSpec::Monomial(vec![1.0, 1.0]),
            method: Method::ClosedForm,
        }),
        "power-sum-convex" => Some(KahaneInstance {
            cov_a: DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 1.0]),
            cov_b: DMatrix::from_row_slice(3, 3, &[1.2, 0.3, 0.1, 0.3, 1.1, 0.4, 0.1, 0.4, 1.0]),
            functional: FunctionalSpec::PowerSum { p: 2.5 },
            method: Method::quadrature(),
        }),
        "quotient-decorrelation" => {
            let base = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 0.8]);
            let pair = decorrelation_surgery(&base, &[0], &[1], 0.3).ok()?;
            Some(KahaneInstance {
                cov_a: pair.a,
                cov_b: pair.b,
                functional: FunctionalSpec::simple_quotient(1.0, 1.0),
                method: Method::quadrature(),
            })
        }
        _ => None,
    }
}

/// One modification of a covariance matrix over a block partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum SurgeryOp {
    /// Add `k` to every entry whose indices both lie in the union of `blocks`
    /// (an independent `sqrt(k) N` shared by all of them).
    AddCommon { blocks: Vec<usize>, k: f64 },
    /// Add `k` within each listed block separately.
    AddIndependent { blocks: Vec<usize>, k: f64 },
    /// Zero the entries between different listed blocks.
    Decouple { blocks: Vec<usize> },
}

fn block_of(blocks: &[Vec<usize>], n: usize) -> Result<Vec<usize>> {
    let mut owner = vec![usize::MAX; n];
    for (b, idx) in blocks.iter().enumerate() {
        for &i in idx {
            if i >= n {
                return Err(Error::InvalidBlocks(format!(
                    "index {i} out of range for dimension {n}"
                )));
            }
            if owner[i] != usize::MAX {
                return Err(Error::InvalidBlocks(format!(
                    "index {i} appears in two blocks"
                )));
            }
            owner[i] = b;
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::InvalidBlocks(format!("index {i} is in no block")));
    }
    Ok(owner)
}

pub fn apply_surgery(
    m: &DMatrix<f64>,
    blocks: &[Vec<usize>],
    ops: &[SurgeryOp],
) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let n = m.nrows();
    let owner = block_of(blocks, n)?;
    let mut out = m.clone();
    for op in ops {
        let listed = |bs: &Vec<usize>| -> Result<()> {
            match bs.iter().find(|&&b| b >= blocks.len()) {
                Some(b) => Err(Error::InvalidBlocks(format!("block {b} does not exist"))),
                None => Ok(()),
            }
        };
        match op {
            SurgeryOp::AddCommon { blocks: bs, k }
            | SurgeryOp::AddIndependent { blocks: bs, k } => {
                listed(bs)?;
                if !(*k >= 0.0) {
                    return Err(Error::InvalidBlocks(format!(
                        "surgery constant {k} must be nonnegative"
                    )));
                }
                let common = matches!(op, SurgeryOp::AddCommon { .. });
                for i in 0..n {
                    for j in 0..n {
                        let (bi, bj) = (owner[i], owner[j]);
                        if bs.contains(&bi) && bs.contains(&bj) && (common || bi == bj) {
                            out[(i, j)] += k;
                        }
                    }
                }
            }
            SurgeryOp::Decouple { blocks: bs } => {
                listed(bs)?;
                for i in 0..n {
                    for j in 0..n {
                        let (bi, bj) = (owner[i], owner[j]);
                        if bi != bj && bs.contains(&bi) && bs.contains(&bj) {
                            out[(i, j)] = 0.0;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Entrywise comparison of `B` against `A` on one block pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockComparison {
    pub b_ge_a: bool,
    pub b_le_a: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `pattern[s][t]` compares the `(s, t)` block pair.
    pub pattern: Vec<Vec<BlockComparison>>,
}

pub fn block_pattern(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    blocks: &[Vec<usize>],
) -> Result<Vec<Vec<BlockComparison>>> {
    let n = check_pair(a, b)?;
    block_of(blocks, n)?;
    Ok(blocks
        .iter()
        .map(|bs| {
            blocks
                .iter()
                .map(|bt| {
                    let pairs = || bs.iter().flat_map(|&i| bt.iter().map(move |&j| (i, j)));
                    BlockComparison {
                        b_ge_a: pairs().all(|(i, j)| b[(i, j)] >= a[(i, j)]),
                        b_le_a: pairs().all(|(i, j)| b[(i, j)] <= a[(i, j)]),
                    }
                })
                .collect()
        })
        .collect())
}

/// Applies `a_ops` to `a_base` and `b_ops` to `b_base` and compares the results blockwise.
pub fn covariance_surgery(
    a_base: &DMatrix<f64>,
    b_base: &DMatrix<f64>,
    blocks: &[Vec<usize>],
    a_ops: &[SurgeryOp],
    b_ops: &[SurgeryOp],
) -> Result<SurgeryPair> {
    check_pair(a_base, b_base)?;
    let a = apply_surgery(a_base, blocks, a_ops)?;
    let b = apply_surgery(b_base, blocks, b_ops)?;
    let pattern = block_pattern(&a, &b, blocks)?;
    Ok(SurgeryPair { a, b, pattern })
}

/// Smallest `K >= 0` with every bulk/boundary cross covariance `>= -K`.
pub fn cross_covariance_floor(m: &DMatrix<f64>, bulk: &[usize], boundary: &[usize]) -> f64 {
    bulk.iter()
        .flat_map(|&i| boundary.iter().map(move |&j| -m[(i, j)]))
        .fold(0.0, f64::max)
}

/// Coupled side `m + K` on all of bulk and boundary; decoupled side with the
/// cross block zeroed and `K` added within each block.
pub fn decorrelation_surgery(
    m: &DMatrix<f64>,
    bulk: &[usize],
    boundary: &[usize],
    k: f64,
) -> Result<SurgeryPair> {
    let blocks = vec![bulk.to_vec(), boundary.to_vec()];
    covariance_surgery(
        m,
        m,
        &blocks,
        &[SurgeryOp::AddCommon {
            blocks: vec![0, 1],
            k,
        }],
        &[
            SurgeryOp::Decouple { blocks: vec![0, 1] },
            SurgeryOp::AddIndependent {
                blocks: vec![0, 1],
                k,
            },
        ],
    )
}

/// Constant `C` in `E[S^p / D^q] <= C E[S^p] E[D^-q]` after decorrelation by `K`.
pub fn decorrelation_constant(p: f64, q: f64, k: f64) -> f64 {
    (k * p * q).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSwapConstants {
    /// `sup |K_N - K_C|` over all pairs.
    pub k: f64,
    /// Same over bulk pairs.
    pub k_bulk: f64,
    /// Same over boundary pairs.
    pub k_boundary: f64,
}

fn sup_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    rows.iter()
        .flat_map(|&i| cols.iter().map(move |&j| (a[(i, j)] - b[(i, j)]).abs()))
        .fold(0.0, f64::max)
}

/// General-kernel side `M_N + K`; exact-kernel side `M_C + (K + K_Q)` on bulk
/// pairs and `M_C + (K + K_I)` on boundary pairs, bulk and boundary independent.
pub fn kernel_comparison_surgery(
    general: &DMatrix<f64>,
    exact: &DMatrix<f64>,
    bulk: &[usize],
    boundary: &[usize],
) -> Result<(SurgeryPair, KernelSwapConstants)> {
    check_pair(general, exact)?;
    let all: Vec<usize> = bulk.iter().chain(boundary).copied().collect();
    let consts = KernelSwapConstants {
        k: sup_diff(general, exact, &all, &all),
        k_bulk: sup_diff(general, exact, bulk, bulk),
        k_boundary: sup_diff(general, exact, boundary, boundary),
    };
    let blocks = vec![bulk.to_vec(), boundary.to_vec()];
    let pair = covariance_surgery(
        general,
        exact,
        &blocks,
        &[SurgeryOp::AddCommon {
            blocks: vec![0, 1],
            k: consts.k,
        }],
        &[
            SurgeryOp::AddIndependent {
                blocks: vec![0],
                k: consts.k + consts.k_bulk,
            },
            SurgeryOp::AddIndependent {
                blocks: vec![1],
                k: consts.k + consts.k_boundary,
            },
        ],
    )?;
    Ok((pair, consts))
}
