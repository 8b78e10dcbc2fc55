use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("point/label count mismatch: {points} points, {labels} labels")]
    CountMismatch { points: usize, labels: usize },

    #[error("label overflow: {field} = {value} does not fit in 16 bits")]
    LabelOverflow { field: &'static str, value: u32 },

    #[error("pose file line {line}: {detail}")]
    PoseLine { line: usize, detail: String },

    #[error("missing pose for frame {0}")]
    MissingPose(usize),

    #[error("class id {0} is not present in the class map")]
    UnmappedClass(u32),

    #[error("no scored points")]
    NoScoredPoints,

    #[error("length mismatch: {0} ground-truth labels vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error("sensor mismatch: {0}")]
    SensorMismatch(String),

    #[error("cell ({row}, {col}) is outside the {rows}x{cols} sensor grid")]
    CellOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("unknown sensor '{0}'")]
    UnknownSensor(String),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}
