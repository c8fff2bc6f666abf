use thiserror::Error;

/// Errors raised by the mixture-model library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("arctan* is undefined for S = C = 0")]
    DegenerateDirection,

    #[error("sample {index} has zero density under every component")]
    DegenerateSample { index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("weighted statistic undefined: all weights are zero")]
    ZeroWeights,

    #[error("rejection sampling bound too loose: {accepted} accepted out of {proposed} proposals")]
    BoundTooLoose { accepted: usize, proposed: usize },

    #[error("degenerate norm estimate: {0}")]
    DegenerateNorm(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
