use std::io;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::imaging::ImagingError;
use crate::scene::SceneError;
use crate::trainer::TrainError;

/// Top-level error of the command-line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    BadArgs(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_ARGS: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

fn imaging_code(e: &ImagingError) -> i32 {
    match e {
        ImagingError::Io { .. } | ImagingError::UnsupportedFormat(_) => EXIT_IO,
        ImagingError::DimensionMismatch(..) | ImagingError::TooSmall(..) => EXIT_BAD_ARGS,
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit status: 2 bad arguments, 3 I/O or malformed input file,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BadArgs(_) => EXIT_BAD_ARGS,
            Error::Io { .. } => EXIT_IO,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Imaging(e) => imaging_code(e),
            Error::Checkpoint(CheckpointError::ModeMismatch { .. }) => EXIT_BAD_ARGS,
            Error::Checkpoint(_) => EXIT_IO,
            Error::Scene(SceneError::Camera(_)) => EXIT_BAD_ARGS,
            Error::Scene(_) => EXIT_IO,
            Error::Train(TrainError::NonFiniteLoss { .. }) => EXIT_NUMERIC,
            Error::Train(TrainError::Imaging(e)) => imaging_code(e),
            Error::Train(_) => EXIT_BAD_ARGS,
        }
    }
}
