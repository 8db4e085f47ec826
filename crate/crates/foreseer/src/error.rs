use std::path::PathBuf;

/// Errors of the std layer. Each maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] foreseer_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("refusing to overwrite non-empty {0} (pass --force)")]
    Exists(PathBuf),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// 2 for configuration problems, 3 for everything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Exists(_) | Error::Core(foreseer_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}
