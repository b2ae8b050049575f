use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FILE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        source: plainusr::CheckpointError,
    },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{0}")]
    Model(#[from] plainusr::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Model(plainusr::Error::Config(_)) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Checkpoint { .. } | CliError::Image { .. } | CliError::Model(_) => {
                EXIT_FILE
            }
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
