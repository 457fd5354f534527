//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("timestamps are not strictly increasing at record {index} ({prev} -> {next})")]
    NonMonotoneTimestamps { index: usize, prev: f64, next: f64 },

    #[error("unparseable timestamp `{0}` (expected ISO-8601 or seconds)")]
    BadTimestamp(String),

    #[error("unknown label token `{0}` (expected Normal/Attack or 0/1)")]
    UnknownLabel(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample")]
    EmptySample,

    #[error("degenerate spectrum: no non-DC component carries energy")]
    DegenerateSpectrum,

    #[error("model is not trained")]
    Untrained,

    #[error("training diverged at epoch {epoch}: loss is {loss} (learning rate too high?)")]
    Diverged { epoch: usize, loss: f64 },

    #[error("non-finite gradient (parameter or iteration {0})")]
    NonFiniteGradient(usize),

    #[error("no (tau, w) pair meets the false-alarm budget {fp_max}; best achievable is {min_false_alarms}")]
    InfeasibleTuning { fp_max: usize, min_false_alarms: usize },

    #[error("labels contain no attack interval")]
    NoAttackIntervals,

    #[error("attack intervals overlap on feature `{0}`")]
    OverlappingAttacks(String),

    #[error("process configuration overflows tank {tank} under normal logic at step {step}")]
    MisconfiguredProcess { tank: usize, step: usize },

    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
