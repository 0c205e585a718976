use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    /// A pipeline stage rejected its input.
    #[error("{stage}: {message}")]
    Input { stage: &'static str, message: String },
    /// A pipeline stage produced no usable numbers (empty surface, NaN, ...).
    #[error("{stage}: {message}")]
    Numeric { stage: &'static str, message: String },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
            Error::Io { .. } | Error::Input { .. } => EXIT_INPUT,
            Error::Numeric { .. } => EXIT_NUMERIC,
        }
    }

    pub fn input(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Error::Input { stage, message: e.to_string() }
    }

    pub fn numeric(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Error::Numeric { stage, message: e.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}
