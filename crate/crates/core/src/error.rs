use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("target index {target} out of range for {classes} classes")]
    TargetIndex { target: i64, classes: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error in {source_name} at {location}: {reason}")]
    Parse {
        source_name: String,
        location: String,
        reason: String,
    },

    #[error("split error: class {class} has {available} examples, needs {required}")]
    Split {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("metrics.csv header mismatch for {path}: only in first run {missing:?}, only in this run {extra:?}")]
    HeaderMismatch {
        path: PathBuf,
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
