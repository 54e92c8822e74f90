use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecregError {
    #[error("argument {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("value {value} outside the representable range of {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("basis mismatch: operator has {expected} slots, element has {got}")]
    BasisMismatch { expected: usize, got: usize },

    #[error("structure check failed: {0}")]
    Structure(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("rate fit refused: {0}")]
    FitRefused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SpecregError>;

pub(crate) fn invalid(msg: impl Into<String>) -> SpecregError {
    SpecregError::InvalidInput(msg.into())
}
