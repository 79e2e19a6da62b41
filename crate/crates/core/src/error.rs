use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by estimation, I/O and configuration.
#[derive(Debug, Error)]
pub enum Error {
    /// The weighted normal equations are rank deficient (collinear or
    /// coincident points, too few constraints).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("view graph is disconnected: {0}")]
    DisconnectedGraph(String),

    #[error("no correspondences survived pruning")]
    EmptyAfterPrune,

    #[error("need at least {required} correspondences, got {got}")]
    TooFewCorrespondences { required: usize, got: usize },

    #[error("index {index} out of range for cloud of {len} points (line {line})")]
    IndexOutOfRange { index: usize, len: usize, line: usize },

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the data rather than by the caller's
    /// input files or flags.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateGeometry(_) | Error::DisconnectedGraph(_) | Error::EmptyAfterPrune
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
