use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("{0}")]
    Argument(String),

    /// An iterative or factorization routine failed to produce a usable answer.
    #[error("{0}")]
    Numeric(String),

    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents (bad header, truncated payload, bad PNG, ...).
    #[error("{path}: {detail}", path = path.display())]
    Format { path: PathBuf, detail: String },

    #[error("{path}: bad magic {found:?}, expected \"RLRT\"", path = path.display())]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported format version {found}", path = path.display())]
    UnsupportedVersion { path: PathBuf, found: u8 },

    #[error("{path}: unsupported dtype code {found}", path = path.display())]
    UnsupportedDtype { path: PathBuf, found: u8 },

    #[error("{path}: truncated file, expected {expected} bytes but found {actual}", path = path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Short machine-readable class name used in CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } | Error::Truncated { .. } => "io",
            Error::Format { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::UnsupportedDtype { .. } => "format",
            Error::Config(_) => "config",
        }
    }
}
