//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (shape mismatch, out-of-range
    /// hyperparameter, label outside the senone set, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// A serialized file failed structural validation. `offset` is the byte
    /// position at which the problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The file's format version is newer than this build understands.
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
