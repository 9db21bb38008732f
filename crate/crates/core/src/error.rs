use std::path::PathBuf;

/// Errors produced by the texture toolkit.
///
/// Variants are grouped by the class of failure so that front ends can map
/// them onto distinct exit codes (see [`Error::class`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported image: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },
    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("solver aborted: {0}")]
    SolverAborted(String),
}

/// Coarse failure category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Numeric,
    Solver,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::UnsupportedImage { .. } | Error::Decode { .. } | Error::CorruptFile(_) => {
                ErrorClass::Io
            }
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::ShapeMismatch(_) | Error::Degenerate(_) | Error::Numerical(_) => ErrorClass::Numeric,
            Error::SolverAborted(_) => ErrorClass::Solver,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
