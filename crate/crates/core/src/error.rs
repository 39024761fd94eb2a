use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("essay {essay_id}: score {score} outside range {min}-{max}")]
    ScoreRange {
        essay_id: i64,
        score: i64,
        min: i64,
        max: i64,
    },

    #[error("{path}: line {line}: invalid UTF-8")]
    Encoding { path: PathBuf, line: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value in {parameter}")]
    Numeric { parameter: String },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
