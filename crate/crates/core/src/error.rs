use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("{path}: empty input")]
    EmptyFile { path: PathBuf },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid character {ch:?} in sequence {id}")]
    InvalidBase { id: String, ch: char },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("single-class input: need at least one positive and one negative")]
    SingleClass,

    #[error("all differences are zero")]
    AllZeroDifferences,

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("model has no convolutional layer ({0})")]
    NoConvolution(String),

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error("all {0} restarts diverged")]
    AllRestartsDiverged(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
