use std::path::{Path, PathBuf};

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: u64, reason: String },
    #[error(transparent)]
    Core(#[from] mimo_nerf_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 usage, 3 I/O or file format, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use mimo_nerf_core::Error as E;
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Diverged { .. } => 4,
            Error::Core(e) => match e {
                E::NonFiniteInput(_) | E::NonFiniteGradient { .. } => 4,
                E::InvalidConfig(_)
                | E::Indivisible { .. }
                | E::IncompatiblePreset { .. }
                | E::RepetitionMismatch { .. }
                | E::InvalidGrouping(_) => 2,
                E::InvalidArchitecture(_) | E::ShapeMismatch(_) => 3,
            },
        }
    }
}
