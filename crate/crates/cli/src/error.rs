use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure of a CLI command, with the process exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    /// A file that parsed but does not describe a valid measure.
    #[error("{}: {msg}", path.display())]
    Input { path: PathBuf, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Solver(#[from] wbary_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Parse { .. } | CliError::Input { .. } => 3,
            CliError::Solver(e) if is_invariant(e) => 5,
            CliError::Solver(_) => 4,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn input(path: &Path, msg: impl ToString) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn is_invariant(e: &wbary_core::Error) -> bool {
    match e {
        wbary_core::Error::InvariantViolation { .. } => true,
        wbary_core::Error::Subsolver { source, .. } => is_invariant(source),
        _ => false,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
