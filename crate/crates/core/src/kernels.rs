//! Log-correlated covariance kernels on the closed upper half-plane.
//!
//! The bulk kernel is `-ln(|z - w| |z - conj(w)|) + g(z, w)`; restricted to
//! the real line it becomes `-2 ln|x - y| + g(x, y)`. With `g = 0` (the
//! exact-scaling kernel) shrinking both points by `r` shifts the kernel by
//! exactly `-2 ln r`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `x + iy` of the closed upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlanePoint {
    pub x: f64,
    pub y: f64,
}

impl HalfPlanePoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidPoint(format!(
                "non-finite coordinate ({x}, {y})"
            )));
        }
        if y < 0.0 {
            return Err(Error::InvalidPoint(format!(
                "y = {y} is below the real line"
            )));
        }
        Ok(Self { x, y })
    }

    /// A point on the real line.
    pub fn boundary(x: f64) -> Self {
        Self { x, y: 0.0 }
    }

    pub fn is_boundary(&self) -> bool {
        self.y == 0.0
    }

    pub fn scaled(&self, r: f64) -> Self {
        Self {
            x: r * self.x,
            y: r * self.y,
        }
    }

    /// `|z - w|`.
    pub fn dist(&self, w: &HalfPlanePoint) -> f64 {
        (self.x - w.x).hypot(self.y - w.y)
    }

    /// `|z - conj(w)|`.
    pub fn dist_to_reflection(&self, w: &HalfPlanePoint) -> f64 {
        (self.x - w.x).hypot(self.y + w.y)
    }
}

/// Signature of a user-supplied kernel correction.
pub type CorrectionFn = dyn Fn(HalfPlanePoint, HalfPlanePoint) -> f64 + Send + Sync;

/// The bounded smooth correction `g` added to the log kernel.
#[derive(Clone)]
pub enum Correction {
    None,
    /// `g(z, w) = cos(Re z - Re w) * exp(-|z - conj(w)|^2)`, sup-norm 1.
    CosGaussian,
    Custom {
        name: String,
        sup_bound: f64,
        func: Arc<CorrectionFn>,
    },
}

impl Correction {
    pub fn custom<F>(name: impl Into<String>, sup_bound: f64, func: F) -> Self
    where
        F: Fn(HalfPlanePoint, HalfPlanePoint) -> f64 + Send + Sync + 'static,
    {
        Correction::Custom {
            name: name.into(),
            sup_bound,
            func: Arc::new(func),
        }
    }

    pub fn eval(&self, z: HalfPlanePoint, w: HalfPlanePoint) -> f64 {
        match self {
            Correction::None => 0.0,
            Correction::CosGaussian => {
                let d = z.dist_to_reflection(&w);
                (z.x - w.x).cos() * (-d * d).exp()
            }
            Correction::Custom { func, .. } => func(z, w),
        }
    }

    /// Declared sup-norm bound of `g`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Correction::None => 0.0,
            Correction::CosGaussian => 1.0,
            Correction::Custom { sup_bound, .. } => *sup_bound,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Correction::None)
    }

    /// Stable identifier used in cache keys and manifests.
    pub fn name(&self) -> String {
        match self {
            Correction::None => "none".into(),
            Correction::CosGaussian => "cos-gaussian".into(),
            Correction::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    /// Checks `g(z, w) == g(w, z)` and the declared bound on every sampled pair.
    pub fn check_symmetry(&self, points: &[HalfPlanePoint]) -> bool {
        let bound = self.sup_bound();
        points.iter().all(|&z| {
            points.iter().all(|&w| {
                let a = self.eval(z, w);
                a == self.eval(w, z) && a.abs() <= bound
            })
        })
    }
}

impl fmt::Debug for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    ExactScaling,
    General,
}

/// Kernel choice plus the radius `r` of the Carleson cube `[-r, r] x [0, 2r]`
/// on which it is evaluated.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    kind: KernelKind,
    correction: Correction,
    domain_radius: f64,
}

pub const DEFAULT_DOMAIN_RADIUS: f64 = 0.5;

impl KernelSpec {
    pub fn new(kind: KernelKind, correction: Correction, domain_radius: f64) -> Result<Self> {
        if !(domain_radius > 0.0) || !domain_radius.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "domain radius {domain_radius} must be positive"
            )));
        }
        if kind == KernelKind::ExactScaling && !correction.is_zero() {
            return Err(Error::InvalidSpec(
                "exact-scaling kernel cannot carry a correction".into(),
            ));
        }
        Ok(Self {
            kind,
            correction,
            domain_radius,
        })
    }

    /// `K_C(z, w) = -ln|z - w||z - conj(w)|` on the default domain.
    pub fn exact_scaling() -> Self {
        Self {
            kind: KernelKind::ExactScaling,
            correction: Correction::None,
            domain_radius: DEFAULT_DOMAIN_RADIUS,
        }
    }

    pub fn general(correction: Correction) -> Self {
        Self {
            kind: KernelKind::General,
            correction,
            domain_radius: DEFAULT_DOMAIN_RADIUS,
        }
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "domain radius {radius} must be positive"
            )));
        }
        self.domain_radius = radius;
        Ok(self)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn correction(&self) -> &Correction {
        &self.correction
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    /// Identifier covering everything that determines kernel values.
    pub fn key(&self) -> String {
        let kind = match self.kind {
            KernelKind::ExactScaling => "exact-scaling",
            KernelKind::General => "general",
        };
        format!("{kind}|{}|{:e}", self.correction.name(), self.domain_radius)
    }

    pub fn check_domain(&self, z: &HalfPlanePoint) -> Result<()> {
        let r = self.domain_radius;
        // Small slack so lattice sites generated by scaling stay admissible.
        let tol = 1e-12 * r;
        if z.x.abs() > r + tol || z.y > 2.0 * r + tol || z.y < 0.0 {
            return Err(Error::OutOfDomain {
                x: z.x,
                y: z.y,
                radius: r,
            });
        }
        Ok(())
    }

    /// Correction term `g(z, w)`, also defined on the diagonal.
    pub fn correction_at(&self, z: HalfPlanePoint, w: HalfPlanePoint) -> f64 {
        self.correction.eval(z, w)
    }
}

/// `-ln(|z - w| |z - conj(w)|) + g(z, w)`.
pub fn eval_bulk(spec: &KernelSpec, z: HalfPlanePoint, w: HalfPlanePoint) -> Result<f64> {
    if z == w {
        return Err(Error::CoincidentPoints);
    }
    spec.check_domain(&z)?;
    spec.check_domain(&w)?;
    Ok(log_kernel(z, w) + spec.correction.eval(z, w))
}

/// `-2 ln|x - y| + g(x, y)` on the real line.
pub fn eval_boundary(spec: &KernelSpec, x: f64, y: f64) -> Result<f64> {
    if x == y {
        return Err(Error::CoincidentPoints);
    }
    let (zx, zy) = (HalfPlanePoint::boundary(x), HalfPlanePoint::boundary(y));
    spec.check_domain(&zx)?;
    spec.check_domain(&zy)?;
    Ok(-2.0 * (x - y).abs().ln() + spec.correction.eval(zx, zy))
}

#[inline]
pub(crate) fn log_kernel(z: HalfPlanePoint, w: HalfPlanePoint) -> f64 {
    -(z.dist(&w) * z.dist_to_reflection(&w)).ln()
}

/// `K(rz, rw) - K(z, w)`; equals `-2 ln r` for the exact-scaling kernel.
pub fn scaling_shift_check(
    spec: &KernelSpec,
    z: HalfPlanePoint,
    w: HalfPlanePoint,
    r: f64,
) -> Result<f64> {
    if spec.kind != KernelKind::ExactScaling {
        return Err(Error::NotExactScaling);
    }
    check_scale(r)?;
    Ok(eval_bulk(spec, z.scaled(r), w.scaled(r))? - eval_bulk(spec, z, w)?)
}

/// Boundary analogue of [`scaling_shift_check`].
pub fn scaling_shift_check_boundary(spec: &KernelSpec, x: f64, y: f64, r: f64) -> Result<f64> {
    if spec.kind != KernelKind::ExactScaling {
        return Err(Error::NotExactScaling);
    }
    check_scale(r)?;
    Ok(eval_boundary(spec, r * x, r * y)? - eval_boundary(spec, x, y)?)
}

fn check_scale(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor {r} must lie in (0, 1]"
        )));
    }
    Ok(())
}
