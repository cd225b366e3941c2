use std::path::PathBuf;

use ilr_core::IlrError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed checks: {}", .0.join(", "))]
    Check(Vec<String>),
    #[error(transparent)]
    Core(#[from] IlrError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                IlrError::Diverged { .. } => 4,
                IlrError::Io(_) | IlrError::Format { .. } => 3,
                IlrError::Domain(_) => 2,
                _ => 1,
            },
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: PathBuf::from("<csv>"),
                source,
            },
            other => CliError::Io {
                path: PathBuf::from("<csv>"),
                source: std::io::Error::other(format!("{other:?}")),
            },
        }
    }
}
