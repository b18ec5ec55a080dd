use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition (bad shape, out-of-range
    /// value, unknown grade, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested quantity is mathematically undefined for the given data
    /// (single-class AUC, rank correlation of a constant vector, ...).
    #[error("{0}")]
    Undefined(String),

    /// A data file is missing, malformed, or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A quantity the library guarantees (tower rule, bias formula equality,
    /// transport marginals) failed its tolerance check.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
