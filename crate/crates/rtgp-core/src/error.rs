//! Crate-wide error type.

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A numerical routine failed (factorization breakdown, overflow,
    /// non-finite intermediate).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A file does not conform to its format; `offset` is the first byte at
    /// which the problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    /// A persisted container was written by an incompatible version.
    #[error("version mismatch: found {found:?}, expected {expected:?}")]
    Version { found: String, expected: String },
    /// A configuration file is malformed or contains unknown keys.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::InvalidArgument`.
pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::invalid(msg)
}

/// Shorthand for `Error::Numerical`.
pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::numerical(msg)
}
