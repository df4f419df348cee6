use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing gold {task} labels required for the cascade input")]
    MissingGoldLabels { task: String },

    #[error("{0}")]
    EmptyCorpus(String),

    #[error("training diverged at step {step}: loss is {loss} for task {task}")]
    Diverged {
        step: usize,
        task: String,
        loss: f64,
    },

    #[error("invalid label sequence: {0}")]
    Labels(String),

    #[error("dictionary error: {0}")]
    Dictionary(String),

    #[error("{file}:{line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },

    #[error("model file error: {0}")]
    Model(String),

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
