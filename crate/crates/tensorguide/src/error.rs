//! Error type shared across the crate.

use thiserror::Error;

/// Errors from tensor, tensor-train, adapter, training, and NTK operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid tensor-train format: {0}")]
    InvalidFormat(String),

    #[error("materialization cap exceeded: {rows}x{cols} = {total} entries > cap {cap}")]
    CapExceeded {
        rows: usize,
        cols: usize,
        total: usize,
        cap: usize,
    },

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("label {label} out of range [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("index {index} out of range [0, {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("malformed file: {0}")]
    MalformedFile(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
