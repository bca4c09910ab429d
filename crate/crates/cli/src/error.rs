use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mcpl_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("cache file {path}: {reason}")]
    Cache { path: PathBuf, reason: CacheFault },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Why a cache file was refused.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheFault {
    #[error("not a cache file (bad magic)")]
    BadMagic,
    #[error("format version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("holds kind {found}, expected {expected}")]
    Kind { found: u32, expected: u32 },
    #[error("corrupt: {0}")]
    Corrupt(String),
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
