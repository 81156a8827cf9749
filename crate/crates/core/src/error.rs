use thiserror::Error;

/// Errors produced by the compression toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("truncated input at byte offset {offset}: {what}")]
    Truncated { offset: usize, what: String },

    #[error("wrong color model: expected {expected}, found {found}")]
    WrongColorModel {
        expected: &'static str,
        found: String,
    },

    #[error("unsupported spherical-harmonics degree {0} (max 3)")]
    UnsupportedDegree(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient for primitive {primitive}")]
    NumericalFailure { primitive: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
