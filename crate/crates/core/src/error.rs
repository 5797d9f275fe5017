use thiserror::Error;

/// Errors produced by trace parsing, generation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// A packet-log line could not be parsed.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// A parameter or record failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The data does not support the requested analysis.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Numerical evaluation failed to converge or left its domain.
    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }
}
