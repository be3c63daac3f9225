use std::fmt;
use std::path::PathBuf;

/// Library-wide error type.
///
/// `InvalidArgument` covers every precondition violation (shape mismatches,
/// out-of-range hyperparameters, empty inputs). `Format` and `Version` are
/// reserved for on-disk artifacts so callers can distinguish corrupt files
/// from files written by an incompatible release.
#[derive(Debug)]
pub enum Error {
    InvalidArgument(String),
    Format(String),
    Version { found: u32, supported: u32 },
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Version { found, supported } => {
                write!(f, "version error: file version {found}, supported {supported}")
            }
            Error::Io { path, source } => write!(f, "io error: {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
