//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the numeric layers and data plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("stream has {rows} events but the window needs at least {window}")]
    EmptyStream { rows: usize, window: usize },

    #[error("normalizer must be fitted before it is applied")]
    Unfitted,

    #[error("batch size {got} is below the minimum of {min} for train-mode batch normalization")]
    BatchTooSmall { got: usize, min: usize },

    #[error("level-1 {side} quote is missing")]
    MissingQuote { side: &'static str },

    #[error("invalid order book event: {0}")]
    InvalidEvent(String),

    #[error("cannot parse {path} at row {row}, col {col}: {cell:?} is not numeric")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        cell: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("dataset is empty after labeling and drops")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("epoch {0} is outside the configured schedule")]
    EpochOutOfRange(usize),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: &'static str,
    },

    #[error("checkpoint checksum mismatch in {path}")]
    Checksum { path: String },

    #[error("checkpoint is incompatible: {0}")]
    CheckpointMismatch(String),

    #[error("gradient check failed: {failures} of {total} tensors exceeded tolerance")]
    GradCheckFailed { failures: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code contract: 2 for configuration/validation problems,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn shape_mismatch(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        expected: expected.into(),
        got: got.into(),
    }
}
