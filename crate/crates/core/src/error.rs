//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A cell index or (row, col) pair fell outside the grid.
    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    /// A problem instance exceeded an exact method's size limit, or a
    /// scene could not fit the requested entities.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Two values that must share a grid geometry did not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A vector had the wrong number of components.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// Wire-format decoding failed.
    #[error(transparent)]
    Decode(#[from] crate::wire::DecodeError),

    /// Configuration file validation failed.
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn capacity(msg: impl Into<String>) -> Self {
        Error::Capacity(msg.into())
    }
}
