use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure to turn one log line into an [`EventRecord`](crate::eventlog::EventRecord).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    /// The line is not a JSON object of the expected shape, or a field has the wrong type.
    #[error("malformed record: {0}")]
    Malformed(String),
    /// The line parses but violates the event schema.
    #[error("schema violation: {0}")]
    Schema(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: RecordError,
    },

    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("ingestion failed: dropped {dropped} of {total} lines (limit {limit:.1}%)", limit = .max_fraction * 100.0)]
    TooManyDropped {
        dropped: usize,
        total: usize,
        max_fraction: f64,
    },

    #[error("feature extraction: {0}")]
    Extraction(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("student {0} is unknown to the model")]
    ColdStart(String),

    #[error("objective diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("model document: {0}")]
    ModelDocument(String),

    #[error("unknown item {0}")]
    UnknownItem(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("metric: {0}")]
    Metric(String),

    #[error("importance: {0}")]
    Importance(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the optimizer rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
