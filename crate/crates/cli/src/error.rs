use std::path::{Path, PathBuf};

use cursor_attn_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// `line` is 1-based; 0 when the whole file is one document.
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: {source}")]
    InvalidAt { path: PathBuf, line: usize, source: CoreError },
    #[error("need at least {need} reports or groups, got {got}")]
    TooFewReports { need: usize, got: usize },
    #[error("png: {0}")]
    Png(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) | CliError::InvalidAt { source: e, .. } => e.kind(),
            CliError::Io { .. } => "io-failure",
            CliError::Malformed { .. } => "malformed-input",
            CliError::TooFewReports { .. } => "too-few-reports",
            CliError::Png(_) => "io-failure",
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> CliError {
        CliError::Malformed { path: path.to_path_buf(), line, msg: msg.into() }
    }

    pub fn invalid(msg: impl Into<String>) -> CliError {
        CliError::Core(CoreError::InvalidValue(msg.into()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
