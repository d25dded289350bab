//! Memory-efficient high-resolution segmentation: an LGViT encoder with
//! dual-gated linear attention, an ECM decoder, segmentation and
//! distillation losses, an analytic cost model, and synthetic data.

pub mod config;
pub mod cost;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod model;
pub mod params;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use model::Model;
pub use params::{Init, ParamStore};
