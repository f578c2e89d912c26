use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A field that must carry energy (the probe in the object update, the
    /// object in the probe update) is identically zero.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {what} at iteration {iteration}, frame {frame}")]
    NonFinite {
        what: &'static str,
        iteration: usize,
        frame: usize,
    },

    #[error("registration failed: {unreliable} of {pairs} frame pairs have an unreliable correlation peak")]
    Registration { unreliable: usize, pairs: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
