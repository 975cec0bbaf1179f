use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    IndexOutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },

    #[error("degenerate circle fit: {0}")]
    DegenerateFit(&'static str),

    #[error("degenerate particle weights: {0}")]
    DegenerateWeights(&'static str),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Coarse classification used by the command line front end to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) => ErrorKind::Config,
            Error::Format { .. }
            | Error::Io { .. }
            | Error::Csv { .. }
            | Error::Alignment(_)
            | Error::InvalidPoint(_) => ErrorKind::Data,
            Error::IndexOutOfBounds { .. }
            | Error::DegenerateFit(_)
            | Error::DegenerateWeights(_) => ErrorKind::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}
