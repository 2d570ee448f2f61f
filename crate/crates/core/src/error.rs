use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate projection: camera-space z = {z:e}")]
    DegenerateProjection { z: f64 },

    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),

    #[error("empty ground range")]
    EmptyRange,

    #[error("degenerate cone: {0}")]
    DegenerateCone(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("at least {needed} views required, got {got}")]
    InsufficientViews { needed: usize, got: usize },

    #[error("no valid ground pixels for scale alignment")]
    EmptyGroundMask,

    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFiniteLoss { term: &'static str, iteration: usize },

    #[error("pedestrian placement failed after {0} attempts")]
    Placement(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// True for errors that stem from configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InsufficientViews { .. }
        )
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
