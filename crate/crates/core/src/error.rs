use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("load error in {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("label out of range: {label} (k = {k})")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid probability vector: {0}")]
    InvalidMarginal(String),

    #[error("support violation: class {class} has target mass but zero source mass")]
    SupportViolation { class: usize },

    #[error("confusion matrix ill-conditioned (sigma_min = {sigma_min:e})")]
    IllConditioned { sigma_min: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("all example weights are zero")]
    ZeroWeights,

    #[error("measure {0} requires an ensemble")]
    RequiresEnsemble(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
