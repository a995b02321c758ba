use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DaalError>;

#[derive(Debug, Error)]
pub enum DaalError {
    /// Invalid parameters or configuration values.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file does not follow the expected byte or text layout.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Inputs disagree with each other (counts, dimensions, lengths).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Fewer than two distinct targets were given to a classifier.
    #[error("degenerate forest: {0}")]
    DegenerateForest(String),

    /// No centroid is available to score a sample.
    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl DaalError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DaalError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        DaalError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
