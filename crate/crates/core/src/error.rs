use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("loss mask selects no entries")]
    EmptyLoss,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("split too small: {0}")]
    Size(String),
    #[error("graph construction: {0}")]
    Construction(String),
    #[error("unknown node: {0}")]
    Lookup(String),
    #[error("label leakage: target pair (data {data}, task {task}) is also a graph edge")]
    Leakage { data: usize, task: usize },
    #[error("episode sampling: {0}")]
    Sampling(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("aggregation: {0}")]
    Aggregation(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset generation: {0}")]
    Generation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
