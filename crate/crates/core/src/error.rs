//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, RapError>;

#[derive(Debug, thiserror::Error)]
pub enum RapError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: label {label:?} is not a known class")]
    UnknownLabel { line: usize, label: String },

    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid task spec: {0}")]
    InvalidTask(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate embedding: pre-normalization norm {norm:e} is below 1e-12")]
    DegenerateEmbedding { norm: f64 },

    #[error("degenerate prototype {class}: blended norm {norm:e} is below 1e-12")]
    DegeneratePrototype { class: usize, norm: f64 },

    #[error("requested {k} clusters from {points} points")]
    TooManyClusters { k: usize, points: usize },

    #[error("cluster-count estimation failed: every cluster fell below the size threshold {threshold}")]
    EstimationFailed { threshold: f64 },

    #[error("label vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown config key {0:?}")]
    UnknownConfigKey(String),

    #[error("config key {key:?}: {message}")]
    InvalidConfigValue { key: String, message: String },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RapError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RapError::Io {
            path: path.into(),
            source,
        }
    }
}
