use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("multi-user coupling matrix is numerically singular (condition number {condition:.3e})")]
    SingularCoupling { condition: f64 },

    #[error("insufficient measurements: {observations} observations for {unknowns} unknowns")]
    InsufficientMeasurements { observations: usize, unknowns: usize },

    #[error("channel estimation failed: {0}")]
    EstimationFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
