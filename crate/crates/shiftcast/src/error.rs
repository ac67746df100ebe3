//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions do not agree; both shapes are named.
    #[error("shape mismatch in {context}: {left} vs {right}")]
    ShapeMismatch {
        context: String,
        left: String,
        right: String,
    },

    /// A window / sequence-length constraint was violated.
    #[error("window error: {0}")]
    Window(String),

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Column/role schema does not match the data file.
    #[error("schema error: {0}")]
    Schema(String),

    /// Malformed or unreadable data file contents.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file is corrupt or has the wrong format/version.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Training aborted; includes location diagnostics for NaN failures.
    #[error("training error: {0}")]
    Train(String),

    /// An API contract was violated (e.g. backward on a non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }
}
