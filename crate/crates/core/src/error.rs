use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("page index {index} out of range (page_count = {page_count})")]
    PageOutOfRange { index: usize, page_count: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("trace position {upto} exceeds trace length {len}")]
    TraceOutOfRange { upto: usize, len: usize },

    #[error("trace exhausted after {consumed} entries")]
    TraceExhausted { consumed: usize },

    #[error("trace of {entries} entries needs {bytes} bytes, over the {budget} byte budget")]
    TraceBudget {
        entries: usize,
        bytes: usize,
        budget: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("previous snapshot not done")]
    PreviousSnapshotPending,

    #[error("no snapshot has been taken")]
    NoSnapshotTaken,

    #[error("unsupported on this platform: {0}")]
    Unsupported(String),

    #[error("snapshot child process failed: {0}")]
    ChildFailed(String),

    #[error("corrupt snapshot header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("snapshot files do not chain: {0}")]
    NotConsecutive(String),

    #[error("sink protocol violation: {0}")]
    Sink(String),

    #[error("transaction {id} aborted: {reason}")]
    Aborted { id: u64, reason: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io {
            context: "i/o".to_string(),
            source,
        }
    }
}
