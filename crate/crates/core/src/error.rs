use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("splats not sorted front to back: depth {prev} precedes {next} at index {index}")]
    Ordering { index: usize, prev: f64, next: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("degenerate neighborhood around point {index}")]
    DegenerateNeighborhood { index: usize },

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("backward pass needs the per-pixel contribution record of the forward pass")]
    MissingContributions,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("alignment window {window}: {message}")]
    Alignment { window: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn image(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Image {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub(crate) fn parse(path: &Path, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
