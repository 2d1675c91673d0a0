use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GsmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected at most {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("enumeration too large: {pairs} support pairs exceeds limit {limit}")]
    EnumerationTooLarge { pairs: u128, limit: u128 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T, E = GsmError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> GsmError {
    GsmError::InvalidParameter(msg.into())
}
