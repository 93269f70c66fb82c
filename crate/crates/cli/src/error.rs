use std::path::PathBuf;

use thiserror::Error;

use crate::image_io::ImageError;
use crate::model_io::ModelError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] gtic_core::Error),
    #[error("dataset: {0}")]
    Data(String),
    #[error("non-finite {what} at batch {batch}")]
    NonFinite { batch: usize, what: String },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<gtic_core::bitstream::StreamError> for CliError {
    fn from(e: gtic_core::bitstream::StreamError) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
