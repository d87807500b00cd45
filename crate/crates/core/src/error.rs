use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("accumulator is empty")]
    EmptyAccumulator,

    #[error("under-determined fit: need at least {needed} samples, got {got}")]
    UnderDetermined { needed: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("out of range: {0}")]
    Range(String),

    #[error("reference border unavailable: {0}")]
    OutOfBorder(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid ordering strategy: {0}")]
    InvalidStrategy(String),

    #[error("kernel file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("kernel file dimension inconsistency: {0}")]
    DimensionInconsistency(String),

    #[error("kernel rows are not orthonormal: ||MM^T - I||_F = {0:e}")]
    OrthonormalityViolation(f64),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn rejected(msg: impl Into<String>) -> Error {
    Error::RejectedInput(msg.into())
}
