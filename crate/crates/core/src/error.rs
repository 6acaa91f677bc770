use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edit conflict: {0}")]
    EditConflict(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{file}:{line}: {msg}")]
    Format { file: PathBuf, line: usize, msg: String },

    #[error("inconsistent bundle: {0}")]
    Consistency(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("subset is empty")]
    EmptySubset,

    #[error("value {value} out of range: {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("no focus nodes: validation and test sets have no normal nodes")]
    EmptyFocus,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("covariance of mixture component {0} is singular")]
    SingularCovariance(usize),

    #[error("attack edit set is empty")]
    EmptyAttackSet,

    #[error("graph has no node features")]
    MissingFeatures,

    #[error("results refer to different poisoned graphs")]
    BundleMismatch,

    #[error("need {needed} adversarial insertions, only {available} available")]
    InsufficientAdversarialEdges { needed: usize, available: usize },

    #[error("experiment spec error at `{path}`: {msg}")]
    Spec { path: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
