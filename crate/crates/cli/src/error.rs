use std::path::PathBuf;

use cellflux_core::Error as CoreError;
use thiserror::Error;

/// Errors of the command-line layer. Each class maps to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error(transparent)]
    Model(#[from] CoreError),

    #[error("rerun: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Exit codes. 2 is left to clap for usage errors.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const DATA: i32 = 5;
    pub const MODEL_INPUT: i32 = 6;
    pub const NUMERICAL: i32 = 7;
    pub const MISMATCH: i32 = 8;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Data { .. } => exit::DATA,
            CliError::Model(CoreError::Singular | CoreError::QpFailed(_)) => exit::NUMERICAL,
            CliError::Model(_) => exit::MODEL_INPUT,
            CliError::Mismatch(_) => exit::MISMATCH,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
