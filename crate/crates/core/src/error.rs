use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ingestion failed at manifest row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("no usable images in {0}")]
    EmptyDataset(PathBuf),

    #[error("checkpoint {path} has format version {found}, expected {expected}")]
    IncompatibleCheckpoint {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint {path} failed integrity check: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },

    #[error("non-finite value encountered: {0}")]
    Divergence(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
