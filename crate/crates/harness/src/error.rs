use std::path::PathBuf;

use fedbayes_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: row {row}, column {column}: {message}")]
    Panel { path: String, row: usize, column: usize, message: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// 2 for bad configuration or input, 3 for numeric failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Panel { .. } => 2,
            HarnessError::Core { source: CoreError::Divergence { .. } | CoreError::Numerical(_), .. } => 3,
            HarnessError::Core { .. } => 2,
            HarnessError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Attaches a description of the failing step to a core error.
pub(crate) trait Context<T> {
    fn context(self, what: &str) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, CoreError> {
    fn context(self, what: &str) -> Result<T> {
        self.map_err(|source| HarnessError::Core { context: what.to_string(), source })
    }
}
