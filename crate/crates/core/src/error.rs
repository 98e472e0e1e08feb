use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("validation error in layer '{layer}': {message}")]
    Validation { layer: String, message: String },

    #[error("unknown layer '{0}'")]
    Lookup(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver diverged: {0} (try a larger rho)")]
    Divergence(String),

    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(layer: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            layer: layer.to_string(),
            message: message.into(),
        }
    }

    /// Whether the error stems from a numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::Divergence(_) | Error::Numeric(_)
        )
    }

    /// Whether the error stems from a malformed file or stored artifact.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format(_)
                | Error::Parse { .. }
                | Error::Bounds(_)
                | Error::Validation { .. }
        )
    }
}
