//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any layer of the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying file-system failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its bytes do not parse as the expected format.
    #[error("{0}")]
    Format(String),

    /// A caller-supplied argument violates an operation's contract.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Shorthand for [`Error::Format`].
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Shorthand for [`Error::Invalid`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

/// Convenient alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
