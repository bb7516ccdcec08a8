use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the audit toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("schema error in {source_name}: {message}")]
    Schema { source_name: String, message: String },

    #[error("{source_name}, row {row}: {message}")]
    Row {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("record id mismatch: {0}")]
    Join(String),

    #[error("target epsilon {target} is unreachable with sigma in [{lo}, {hi}]")]
    Unreachable { target: f64, lo: f64, hi: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

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

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: impl FnOnce() -> String) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.in_stage(stage()))
    }
}
