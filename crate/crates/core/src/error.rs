use std::path::PathBuf;

use thiserror::Error;

use crate::domain::{ExpressionClass, KnowledgeStage};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown expression label {0:?}")]
    UnknownExpression(String),

    #[error("unknown action unit {0:?}")]
    UnknownActionUnit(String),

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("row {row}: column {column} value {value} out of range")]
    OutOfRange { row: usize, column: String, value: f64 },

    #[error("row {row}: column {column} is not numeric ({text:?})")]
    NonNumeric { row: usize, column: String, text: String },

    #[error("row {row}: negative score in column {column}")]
    NegativeScore { row: usize, column: String },

    #[error("row {row}: scores sum to {sum}, outside the renormalization tolerance")]
    ScoreSum { row: usize, sum: f64 },

    #[error("frames are not sorted by frame index (at frame {0})")]
    UnsortedFrames(u32),

    #[error("records mix videos {0:?} and {1:?}")]
    MixedVideos(String, String),

    #[error("no reliable frames for classes {0:?}")]
    EmptyClasses(Vec<ExpressionClass>),

    #[error("expected knowledge stage {expected}, found {found}")]
    Stage {
        expected: KnowledgeStage,
        found: KnowledgeStage,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("corrupt knowledge file: {0}")]
    CorruptKnowledge(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("corrupt data file: {0}")]
    CorruptData(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 for contract and
    /// usage errors, 2 for numeric failures, 3 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 2,
            Error::Io(_) | Error::File { .. } => 3,
            Error::Csv(e) if e.is_io_error() => 3,
            _ => 1,
        }
    }
}
