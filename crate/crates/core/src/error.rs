//! Error type shared across the crate.

/// Errors returned by the fault-generation, preprocessing, training and
/// dataset-container code paths.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Tensor or batch shapes are inconsistent.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called in the wrong order (e.g. backward twice).
    #[error("invalid state: {0}")]
    State(String),

    /// The input is numerically degenerate (e.g. zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A container or checkpoint file is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
