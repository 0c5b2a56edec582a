use std::path::PathBuf;

use crate::model::ModelId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding is the zero vector")]
    ZeroVector,

    #[error("duplicate record id {0}")]
    DuplicateRecord(u64),

    #[error("stale feedback: record {record_id} has ts_ms {ts_ms}, older than last applied {last_ts_ms}")]
    StaleFeedback {
        record_id: u64,
        ts_ms: u64,
        last_ts_ms: u64,
    },

    #[error("no model fits budget {budget}; cheapest available model costs {cheapest_cost}")]
    BudgetExhausted { budget: f64, cheapest_cost: f64 },

    #[error("no available models registered")]
    NoAvailableModels,

    #[error("unknown model {0}")]
    UnknownModel(ModelId),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("invariant violated: {0}")]
    InvariantViolated(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
