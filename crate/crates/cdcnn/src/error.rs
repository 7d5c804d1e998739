//! Error type shared across the crate.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// NaN or infinity surfaced where only finite values are allowed.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("checkpoint: bad magic bytes (expected \"CDCN\")")]
    BadMagic,

    #[error("checkpoint: unsupported version {0:#04x}")]
    UnsupportedVersion(u8),

    #[error("checkpoint: truncated: {0}")]
    Truncated(String),

    #[error("checkpoint: inconsistent header: {0}")]
    InconsistentHeader(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("training aborted: {0}")]
    TrainingAborted(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    /// Process exit code category: 2 usage, 3 data validation, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::NonFinite(_) | Error::TrainingAborted(_) => 4,
            _ => 3,
        }
    }
}
