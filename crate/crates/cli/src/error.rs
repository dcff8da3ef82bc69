use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;
pub const EXIT_ASSERTION: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{failed} assertion(s) failed")]
    Assertion { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Image { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Internal(_) => EXIT_INTERNAL,
            CliError::Assertion { .. } => EXIT_ASSERTION,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Image {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<tdae_core::Error> for CliError {
    fn from(e: tdae_core::Error) -> Self {
        use tdae_core::Error as E;
        match e {
            E::Config(_) | E::Plan(_) | E::UnknownFamily(_) | E::NoEncoder | E::ShapeMismatch { .. } | E::ImageTooSmall(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
