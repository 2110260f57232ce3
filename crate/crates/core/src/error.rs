use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ApeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ApeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("line count mismatch: {0}")]
    LineCountMismatch(String),
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error("empty reference")]
    EmptyReference,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("alignment link {src}-{tgt} out of bounds for {src_len}x{tgt_len} sentence pair")]
    LinkOutOfBounds {
        src: usize,
        tgt: usize,
        src_len: usize,
        tgt_len: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown feature name {0:?}")]
    UnknownFeature(String),
    #[error("online protocol violation: {0}")]
    Protocol(String),
}

impl ApeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ApeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        ApeError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
