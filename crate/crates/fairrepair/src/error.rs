use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fairrepair_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("external solver failed: {0}")]
    Solver(String),
}

/// Machine-readable failure, printed as one JSON line on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(_) => "validation",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
        }
    }

    /// 2 for anything the caller can fix in the input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Solver(_) => 1,
            _ => 2,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}
