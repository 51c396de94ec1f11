use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: file not found")]
    NotFound { path: PathBuf },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: corrupt file: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("{path}: format version {found} is not supported (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },

    #[error("{0}")]
    Mismatch(String),

    #[error("{path} already exists (pass --force to overwrite)")]
    Exists { path: PathBuf },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: hound::Error },

    #[error(transparent)]
    Core(#[from] nbn_core::Error),
}

impl Error {
    /// Stable, machine-parsable identifier printed as `error[CODE]`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound { .. } => "E_NOT_FOUND",
            Error::Io { .. } => "E_IO",
            Error::Corrupt { .. } => "E_CORRUPT",
            Error::Version { .. } => "E_VERSION",
            Error::Mismatch(_) => "E_MISMATCH",
            Error::Exists { .. } => "E_EXISTS",
            Error::Usage(_) => "E_USAGE",
            Error::Config(_) => "E_CONFIG",
            Error::Wav { .. } => "E_WAV",
            Error::Core(e) => match e {
                nbn_core::Error::Config(_) | nbn_core::Error::Layout(_) => "E_CONFIG",
                nbn_core::Error::NonFinite(_) | nbn_core::Error::NonFiniteGradient { .. } => "E_NUMERIC",
                _ => "E_INPUT",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Maps an IO error, keeping "not found" distinct from other failures.
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path: path.to_path_buf() }
        } else {
            Error::Io { path: path.to_path_buf(), source }
        }
    }

    pub fn corrupt(path: &Path, reason: impl Into<String>) -> Self {
        Error::Corrupt { path: path.to_path_buf(), reason: reason.into() }
    }
}
