use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum EfmError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("a random stream is required when mc_subsample is set")]
    MissingStream,

    #[error("field is degenerate at {0:?}")]
    FieldDegenerate(Vec<f64>),

    #[error("empty batch")]
    EmptyBatch,

    #[error("every target in the batch was degenerate ({0} dropped)")]
    AllTargetsDegenerate(usize),

    #[error("corrupt weight file: {0}")]
    CorruptWeights(String),

    #[error("unsupported weight file version {found} (expected {expected})")]
    WeightVersion { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("coordinate {0} has zero variance")]
    ZeroVariance(usize),

    #[error("open polyline: the first and last loop points must coincide")]
    OpenPolyline,

    #[error("loop needs at least {min} segments, got {got}")]
    TooFewSegments { min: usize, got: usize },

    #[error("empty box")]
    EmptyBox,

    #[error("wrong training-volume mode: {0}")]
    WrongMode(String),

    #[error("step limit of {0} exceeded")]
    StepLimit(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EfmError>;

impl EfmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EfmError::Io {
            path: path.into(),
            source,
        }
    }
}
