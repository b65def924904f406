use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the emulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value {value} lies outside the quantizer range [{min}, {max}]")]
    Overflow { value: f64, min: f64, max: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { value: f64, index: usize },

    #[error("tensor file {path}: {reason}")]
    TensorFile { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

/// Rejects NaN and infinities, reporting the first offending index.
pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            value: values[index],
            index,
        }),
        None => Ok(()),
    }
}
