use std::path::PathBuf;

use crate::checkpoint::CheckpointError;

/// Errors surfaced by the toolkit and the command line.
#[derive(Debug, thiserror::Error)]
pub enum LtrError {
    #[error(transparent)]
    Core(#[from] ltr_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("measurement error: {0}")]
    Measurement(String),
}

impl LtrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LtrError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LtrError::Validation(_) | LtrError::Core(ltr_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = LtrError> = std::result::Result<T, E>;
