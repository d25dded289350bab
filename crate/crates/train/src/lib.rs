//! Optimizer, training loops, verification drivers and the CLI for the
//! segmentation model.

pub mod adam;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod train;

pub use config::{Profile, TrainConfig};
pub use error::{Error, Result};
