//! Lattice laboratory for bulk and boundary Gaussian multiplicative chaos on
//! the upper half-plane.
//!
//! The crate builds cell-centred lattices, assembles log-correlated
//! covariance matrices, samples fields from a reusable factorization, and
//! evaluates GMC masses and bulk/boundary quotient moments. Around that core
//! sit exact tiling geometry, the scaling-exponent algebra, a finite-vector
//! Gaussian comparison toolkit, and Monte Carlo estimators.

pub mod error;
pub mod estimator;
pub mod exponents;
pub mod geometry;
pub mod gmc;
pub mod kahane;
pub mod kernels;
pub mod lattice;
pub mod parallel;

pub use error::{Error, Result};
pub use kernels::{Correction, HalfPlanePoint, KernelKind, KernelSpec};
pub use lattice::{CovarianceModel, FieldSample, Interval, Lattice, Rect, RngStream};
