use thiserror::Error;

/// Errors raised by the estimators, solvers and file formats in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point lies outside the domain of the subdifferential")]
    OutsideSubdifferentialDomain,

    #[error("operation not supported for this prior: {0}")]
    Unsupported(String),

    #[error("solver did not converge after {iterations} iterations (relative change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("quadrature did not reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    RefinementFailure { estimate: f64, tolerance: f64 },

    #[error("discrete argmax of {what} sits on a grid endpoint; widen the grid")]
    EndpointArgmax { what: &'static str },

    #[error("malformed image file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
