use std::path::PathBuf;

use thiserror::Error;

use crate::ids::ImageId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate quaternion with norm {norm}")]
    DegenerateQuaternion { norm: f64 },

    #[error("unknown image id {0}")]
    UnknownImage(ImageId),

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("scene map invariant violated: {0}")]
    MapInvariant(String),

    #[error("empty query set")]
    EmptyQuerySet,

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}
