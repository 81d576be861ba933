use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("backward called on an empty graph (no forward pass)")]
    EmptyGraph,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("token index {index} out of vocabulary range {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("instance `{instance}` references missing template `{template}`")]
    DanglingTemplate { instance: String, template: String },

    #[error("duplicate instance id `{0}`")]
    DuplicateInstance(String),

    #[error("invalid template `{template}`: {message}")]
    InvalidTemplate { template: String, message: String },

    #[error("invalid instance `{instance}`: {message}")]
    InvalidInstance { instance: String, message: String },

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("missing referring expression for slot `{slot}` of template `{template}`")]
    MissingRefex { template: String, slot: String },

    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
