use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("split index k={k} needs campaign k+1 but only {campaigns} campaigns exist")]
    SplitOutOfRange { k: usize, campaigns: usize },

    #[error("strong-signal keyword `{word}` is shared by campaigns {first} and {second}")]
    OverlappingKeywords {
        word: String,
        first: usize,
        second: usize,
    },

    #[error("k-means asked for {k} clusters from {points} points")]
    TooFewPoints { k: usize, points: usize },

    #[error("proxy set is empty")]
    EmptyProxySet,

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(String),

    #[error("training diverged in {stage} at epoch {epoch}: {detail}")]
    Diverged {
        stage: String,
        epoch: usize,
        detail: String,
    },

    #[error("t-test needs at least 3 runs per side, got {a} and {b}")]
    TooFewRuns { a: usize, b: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint has {expected}, vocabulary is {found}")]
    VocabularyMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
