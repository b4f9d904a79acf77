use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("row count mismatch: accumulator holds {expected} rows, got {actual}")]
    RowCountMismatch { expected: usize, actual: usize },

    #[error("action {action} outside [1, {count}]")]
    ActionOutOfRange { action: usize, count: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("action distribution sums to {0}, expected 1")]
    BadDistribution(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
