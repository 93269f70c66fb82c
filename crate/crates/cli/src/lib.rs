//! Training loop, image and model I/O, configuration and the commands
//! behind the `gtic` binary.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod model_io;
pub mod train;

pub use config::{NMode, TrainConfig};
pub use error::{CliError, Result};
pub use model_io::Checkpoint;
