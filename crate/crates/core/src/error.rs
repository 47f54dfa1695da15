use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point ({re}, {im}) is not in the open upper half-plane")]
    NotInUpperHalfPlane { re: f64, im: f64 },
    #[error("denominator magnitude {magnitude:e} is below tolerance")]
    DegenerateDenominator { magnitude: f64 },
    #[error("image has non-positive imaginary part {im:e}")]
    LeftHalfPlane { im: f64 },
    #[error("Moebius map is singular (|det| = {det:e})")]
    SingularMap { det: f64 },
    #[error("energy has negative imaginary part {im:e}")]
    LowerHalfPlaneEnergy { im: f64 },
    #[error("tree with {count} vertices exceeds the cap of {cap}")]
    SizeOverflow { count: u128, cap: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("vertex {0} is not in the tree")]
    UnknownVertex(usize),
    #[error("invalid potential model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("eigenvalues coincide at lambda = {lambda}")]
    DegenerateEigenvalues { lambda: String },
    #[error("shape is symmetric (m = n = {0})")]
    ShapeSymmetric(usize),
    #[error("weight sum vanishes: (z1, z2) = (z_ref, z_ref)")]
    DegeneratePair,
    #[error("pair lies inside the compact set (weight sum {weight_sum:e} < {threshold})")]
    InsideCompact { weight_sum: f64, threshold: f64 },
    #[error("singular system: pivot {pivot:e} at row {row}")]
    SingularSystem { pivot: f64, row: usize },
    #[error("threshold {threshold} coincides with an eigenvalue")]
    ExactEigenvalueHit { threshold: f64 },
    #[error("no upper half-plane fixed point at lambda = {lambda}")]
    NoUpperRoot { lambda: String },
    #[error("degenerate update rate {rate:e} exceeds {limit:e}")]
    DegenerateRate { rate: f64, limit: f64 },
    #[error("populations are at different energies")]
    LambdaMismatch,
}

pub type Result<T> = std::result::Result<T, Error>;
