use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("class centroid for label {label} has a zero entry at index {index}")]
    DegenerateCentroid { label: usize, index: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty dataset in {0}")]
    EmptyDataset(&'static str),

    #[error("cannot keep {alpha}% of class {class}: it has only {count} samples")]
    SubsampleTooSmall { class: usize, count: usize, alpha: f64 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("report keys do not match: {0}")]
    KeyMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. } | Error::DimensionMismatch { .. } | Error::KeyMismatch(_)
        )
    }
}
