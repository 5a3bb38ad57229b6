use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("{path}: row {row}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{0}")]
    Dataset(String),

    #[error("{path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error("covariate source exhausted: needed timestamps through index {needed}, only {available} available")]
    CovariatesExhausted { needed: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
