use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("item index {index} out of range for {items} items")]
    ItemOutOfRange { index: usize, items: usize },

    #[error("covariance for item {item} is not positive definite")]
    NotPositiveDefinite { item: usize },

    #[error("negative variance gap {gap:e} for item {item} at horizon offset {offset}")]
    NegativeGap {
        item: usize,
        offset: usize,
        gap: f64,
    },

    #[error("non-finite gradient at step {step}, coordinate {coordinate}")]
    NonFiniteGradient { step: usize, coordinate: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
