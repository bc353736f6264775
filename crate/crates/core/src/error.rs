use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: expected {expected} values, found {found}")]
    LengthMismatch {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("{file}: non-finite value at index {index}")]
    NonFinite { file: String, index: usize },
    #[error("duplicate id {0}")]
    DuplicateId(i64),
    #[error("trial {trial_id}: {reason}")]
    TrialOutOfBounds { trial_id: u32, reason: String },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{side} row {row} has zero norm")]
    ZeroNorm { side: &'static str, row: usize },
    #[error("missing embedding for trial {0}")]
    MissingEmbedding(i64),
    #[error("singular covariance (try shrinkage > 0): {0}")]
    SingularCovariance(String),
    #[error(transparent)]
    Autodiff(#[from] sacm_autodiff::AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
