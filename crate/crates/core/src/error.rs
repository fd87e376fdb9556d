//! Crate-wide error type.
//!
//! Variants are grouped by how a caller should react: configuration problems
//! (bad arguments, inconsistent settings), data problems (missing, corrupt or
//! degenerate inputs), and runtime failures (a training step blowing up).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image extents do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter value outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An API contract was violated (e.g. backward on a consumed tape).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A measurement that carries no usable signal (reference intensity zero).
    #[error("degenerate measurement: {0}")]
    DegenerateMeasurement(String),

    /// Unusable input data (empty directory, unreadable corpus, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training aborted; `step` is the 1-based optimizer step that failed.
    #[error("training failed at step {step}: {msg}")]
    Train { step: usize, msg: String },

    /// A persisted artifact could not be decoded.
    #[error("load error: {0}")]
    Load(String),

    /// A cache whose content no longer matches its manifest.
    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn load(msg: impl Into<String>) -> Self {
        Error::Load(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
