//! The multi-scale subtraction segmentation network.

pub mod checkpoint;
mod config;
mod network;
mod params;

pub use config::{FusionMode, ModelConfig, LEVELS};
pub use network::{FeaturePyramid, Model, MsGrid};
pub use params::{he_uniform, init_params, ConvSlot, Layout, ParamGroup};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input size: {0}")]
    InputSize(String),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("malformed checkpoint at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
