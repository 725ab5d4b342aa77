use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: class {index} out of range for {classes} classes")]
    Index { index: usize, classes: usize },

    #[error("label error: label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: epoch {epoch} outside 0..{epochs}")]
    Range { epoch: usize, epochs: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("vocabulary error: token id {id} not in vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },

    #[error("empty context: attention needs at least one key")]
    EmptyContext,

    #[error("AUROC undefined: every class lacks positives or negatives")]
    UndefinedAuroc,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
