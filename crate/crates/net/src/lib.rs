//! A small 3D segmentation network with a deep interactive module, trained
//! with hand-derived gradients.

pub mod augment;
pub mod checkpoint;
pub mod gradcheck;
mod model;
pub mod ops;
pub mod optim;
pub mod predict;
mod tensor;
pub mod train;

pub use model::{check_spatial, DimVariant, Model, NetConfig, ParamStore, Tape};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use predict::predict;
pub use tensor::{Real, Tensor};
pub use train::{train, train_with, TrainConfig, TrainOutput, TrainSample};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}
