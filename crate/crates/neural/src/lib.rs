//! Small reverse-mode autodiff on dense tensors, and the two priors built
//! with it: a K-conditioned heatmap network for Gaussian positions and a
//! dense attribute network.

pub mod attributes;
pub mod error;
pub mod params;
pub mod pipeline;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod unet;

pub use attributes::{gather_attributes, gather_backward, AttributeMaps};
pub use error::NeuralError;
pub use params::{AdamW, ParamId, ParamStore};
pub use pipeline::{initial_positions, initial_set, PositionPrior};
pub use scalar::NeuralReal;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use train::{
    train_attribute_net, train_position_net, AttrTrainConfig, AttributeTrainer, HeatmapSource, PositionTrainer,
    PriorTrainConfig, TrainRecord,
};
pub use unet::{normalize_k, AttributeNet, PositionNet};

pub type TensorF = Tensor<f32>;
pub type TensorD = Tensor<f64>;
pub type PositionNetF = PositionNet<f32>;
pub type AttributeNetF = AttributeNet<f32>;
