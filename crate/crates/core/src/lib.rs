//! Hybrid CNN, transformer and state-space segmentation network.

pub mod attention;
pub mod backbones;
pub mod config;
pub mod ctx;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod harness;
mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod ssm;

pub use config::{AblationFlags, ModelConfig, Scale, Variant};
pub use error::{Error, Result};
pub use model::MambaCafu;
pub use params::ParamStore;
