use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("required input {path} is missing: {reason}")]
    Missing { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] tremorkit::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Machine-readable form printed on stderr when a subcommand fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl CliError {
    pub fn missing(path: &Path, reason: impl std::fmt::Display) -> Self {
        CliError::Missing {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Missing { .. } => "missing_input",
            CliError::Config(_) => "config",
            CliError::Write { .. } => "write",
            CliError::Core(_) => "pipeline",
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            CliError::Missing { path, .. } | CliError::Write { path, .. } => Some(path),
            CliError::Core(tremorkit::Error::Io { path, .. } | tremorkit::Error::Format { path, .. }) => Some(path),
            _ => None,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            path: self.path().map(Path::to_path_buf),
        }
    }
}
