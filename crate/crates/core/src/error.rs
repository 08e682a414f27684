use std::path::PathBuf;

use crate::metric::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    RawIo(#[from] std::io::Error),

    /// Malformed binary file; `offset` is the byte offset of the bad record.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("stats error: {0}")]
    Stats(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
