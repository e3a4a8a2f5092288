use std::io;
use std::path::{Path, PathBuf};

use crate::gaft::GaftError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] gaflow_core::Error),
    #[error("{}: {source}", path.display())]
    Gaft { path: PathBuf, source: GaftError },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn gaft(path: &Path, source: GaftError) -> Self {
        Error::Gaft {
            path: path.to_owned(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.to_owned(),
            source,
        }
    }

    /// 1 for bad input, 2 when the barrier solver fails to converge, 3 for
    /// I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(gaflow_core::Error::NoConvergence { .. } | gaflow_core::Error::IllConditioned { .. }) => 2,
            Error::Io { .. } | Error::Gaft { source: GaftError::Io(_), .. } => 3,
            Error::Json { source, .. } if source.is_io() => 3,
            _ => 1,
        }
    }
}
