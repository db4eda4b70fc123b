//! Fully convolutional segmentation network with manual backpropagation.

mod adam;
pub mod gradcheck;
mod io;
mod layers;
mod network;
mod tensor;
mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use io::{load_params, read_params, save_params, write_params, PARAMS_FORMAT_VERSION};
pub use layers::{
    concat_channels, conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, softmax_channels, softmax_cross_entropy, split_channels,
    upsample2_backward, upsample2_forward, ConvGrads,
};
pub use network::{
    backward, forward, image_to_tensor, loss_and_gradients, predict, ArchitectureConfig,
    ConvParams, ForwardCache, Gradients, NetworkParams, Prediction, UpsampleMode,
};
pub use tensor::Tensor4;
pub use train::{
    augment_flip, train, train_with_progress, train_with_validator, validation_dice,
    EarlyStopping, EpochRecord, Sample, StopDecision, TrainConfig, TrainLog,
};

#[derive(Debug, Error)]
pub enum SegnetError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("OddDimension: {height}x{width} cannot be max-pooled by 2")]
    OddDimension { height: usize, width: usize },
    #[error("DimensionNotDivisible: {height}x{width} is not a multiple of {divisor}")]
    DimensionNotDivisible { height: usize, width: usize, divisor: usize },
    #[error("EmptyDataset: no samples")]
    EmptyDataset,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("InvalidParamsFile: {0}")]
    InvalidParamsFile(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("NonFinite: {0}")]
    NonFinite(String),
}

impl SegnetError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ShapeMismatch(_) => "ShapeMismatch",
            Self::OddDimension { .. } => "OddDimension",
            Self::DimensionNotDivisible { .. } => "DimensionNotDivisible",
            Self::EmptyDataset => "EmptyDataset",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::InvalidParamsFile(_) => "InvalidParamsFile",
            Self::Io(_) => "Io",
            Self::NonFinite(_) => "NonFinite",
        }
    }
}
