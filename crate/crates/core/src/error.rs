//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the compromise toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("duplicate pair_id `{0}`")]
    DuplicatePair(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("could not parse model response: {message}\n--- raw response ---\n{raw}")]
    Parse { message: String, raw: String },

    #[error("compromise for pair `{pair_id}` has no scores")]
    Unscored { pair_id: String },

    #[error("pair `{pair_id}` has {available} scored candidates, {requested} requested")]
    InsufficientCandidates {
        pair_id: String,
        available: usize,
        requested: usize,
    },

    #[error("rating rejected: {0}")]
    Rating(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("configuration errors:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("stage `{stage}` requires output of stage `{missing}`, which has not been run")]
    MissingUpstream { stage: String, missing: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
