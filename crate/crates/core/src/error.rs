use std::path::PathBuf;

use stegan_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StegoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("png decode error: {0}")]
    Decode(String),
    #[error("capacity exceeded: payload needs {needed} bits, carrier holds {available}")]
    CapacityExceeded { needed: usize, available: usize },
    #[error("malformed length header: declares {declared} bits but only {capacity} fit")]
    MalformedHeader { declared: usize, capacity: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image extent {extent} is not a multiple of {multiple}")]
    Extent { extent: usize, multiple: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("config hash mismatch: checkpoint has {found}, config gives {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("non-finite loss in phase {phase} at step {step}: {detail}")]
    NonFinite {
        phase: &'static str,
        step: u64,
        detail: String,
    },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl StegoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StegoError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = StegoError> = std::result::Result<T, E>;
