use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::GatewayError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: label {value:?} is not permitted here")]
    Label {
        path: PathBuf,
        line: u64,
        value: String,
    },

    #[error("{path}:{line}: input is not valid UTF-8")]
    Encoding { path: PathBuf, line: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("segmenter error: {0}")]
    Segmenter(String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("run interrupted; completed LLM calls are checkpointed in the cache")]
    Interrupted,

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
