use thiserror::Error;

/// Errors raised by the lattice laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("coincident points: the log kernel is singular on the diagonal")]
    CoincidentPoints,
    #[error("point ({x}, {y}) lies outside the kernel domain of radius {radius}")]
    OutOfDomain { x: f64, y: f64, radius: f64 },
    #[error("kernel is not of exact-scaling kind")]
    NotExactScaling,
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("region aspect ratio does not admit square cells with {n_cells} cells across (ratio {ratio})")]
    NonSquareCells { n_cells: usize, ratio: f64 },
    #[error("PSD repair changed the matrix by {change:.3e} (budget {budget:.3e})")]
    RepairTooLarge { change: f64, budget: f64 },
    #[error("{sites} sites exceed the dense factorization cap of {cap}")]
    TooManySites { sites: usize, cap: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("boundary site {site} coincides with the insertion point")]
    SiteOnInsertion { site: f64 },
    #[error("invalid gamma {0}: must lie in (0, 2)")]
    InvalidGamma(f64),
    #[error("degenerate denominator: boundary mass is {0}")]
    DegenerateDenominator(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("functional is not integrable against the interpolated Gaussian: {0}")]
    NonIntegrable(String),
    #[error("invalid blocks: {0}")]
    InvalidBlocks(String),
    #[error("tangential trapezoid: side lines meet at height {y} inside the strip [0, {height}]")]
    TangentialIntersection { y: f64, height: f64 },
    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cache error: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, Error>;
