use thiserror::Error;

/// Errors produced by the projected-normal routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("hypergeometric parameter b = {0} is a non-positive integer")]
    Pole(f64),

    #[error("series did not converge after {0} terms")]
    NonConvergence(usize),

    #[error("argument out of supported range: {0}")]
    OutOfRange(String),

    #[error("point is not on the unit sphere (|norm - 1| = {0:e})")]
    NotOnSphere(f64),

    #[error("point is outside the open unit ball (norm = {0})")]
    OutsideBall(f64),

    #[error("point is outside the open ellipsoid (y'By = {0})")]
    OutsideEllipsoid(f64),

    #[error("denominator constant must be positive, got {0}")]
    NonpositiveC(f64),

    #[error("invalid projection variant: {0}")]
    InvalidVariant(String),

    #[error("zero vector cannot be projected or normalized")]
    ZeroVector,

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("reference value has zero norm")]
    ZeroTruth,

    #[error("cosine similarity undefined for zero input")]
    ZeroInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
