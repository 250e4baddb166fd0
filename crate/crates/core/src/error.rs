use std::path::PathBuf;

use thiserror::Error;

use crate::pipeline::TraceRow;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("target at flat index {index} is {value}, expected 0 or 1")]
    InvalidTarget { index: usize, value: f64 },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("non-finite gradient in parameter `{parameter}`")]
    NonFiniteGradient { parameter: String },

    #[error("input {height}x{width} is smaller than the minimum side {min}")]
    InputTooSmall { height: usize, width: usize, min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("unknown class name `{0}`")]
    UnknownClass(String),

    #[error("invalid label set: {0}")]
    InvalidLabels(String),

    #[error("PGM parse error at byte {offset}: {message}")]
    Pgm { offset: usize, message: String },

    #[error("image `{image_id}` is missing")]
    MissingImage { image_id: String },

    #[error("split needs at least 3 patients, found {count}")]
    TooFewPatients { count: usize },

    #[error("split file line {line}: {message}")]
    SplitFile { line: usize, message: String },

    #[error("no data: {0}")]
    EmptyData(&'static str),

    #[error("learning-rate sweep never decreased the loss")]
    NoDescendingRegion,

    #[error("training diverged at step {step} (non-finite loss)")]
    Diverged { step: usize, trace: Vec<TraceRow> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint does not fit model: parameter `{name}` {reason}")]
    ArchitectureMismatch { name: String, reason: String },

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
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical divergence rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::NonFiniteGradient { .. }
        )
    }
}
