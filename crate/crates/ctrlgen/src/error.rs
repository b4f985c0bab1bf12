use std::path::Path;

use thiserror::Error;

/// Errors surfaced by the command line, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: malformed record: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),
    #[error(transparent)]
    Model(#[from] ctrlgen_core::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Io { .. } => 3,
            Self::Format { .. } => 4,
            Self::Checkpoint { .. } => 5,
            Self::Vocabulary(_) => 6,
            Self::Model(_) => 7,
            Self::Internal(_) => 70,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Io { .. } => "io",
            Self::Format { .. } => "format",
            Self::Checkpoint { .. } => "checkpoint",
            Self::Vocabulary(_) => "vocabulary",
            Self::Model(_) => "model",
            Self::Internal(_) => "internal",
        }
    }
}
