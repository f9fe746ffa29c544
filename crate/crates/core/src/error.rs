use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("no examples")]
    NoExamples,
    #[error("example {id}: feature dimension {got}, expected {expected}")]
    InconsistentDimension { id: String, expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("embedding failed for {id}: {msg}")]
    Embed { id: String, msg: String },
    #[error("example {0} has no feature vector")]
    MissingFeature(String),
    #[error("example {0} has no gold label")]
    MissingGold(String),
    #[error("invalid label space: {0}")]
    LabelSpace(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("invalid batching: {0}")]
    Batch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("annotation model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("annotation model protocol error: {0}")]
    Protocol(String),
    #[error("datastore is empty")]
    EmptyStore,
    #[error("datastore has {have} entries, need at least {need}")]
    StoreTooSmall { have: usize, need: usize },
    #[error("unknown suggestion {0:?}")]
    UnknownSuggestion(String),
    #[error("no suggestions recorded yet")]
    NoSuggestions,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("requested size {size} exceeds corpus of {available} examples")]
    SizeExceedsCorpus { size: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
