//! Hand-written neural-network engine: tensors, per-layer forward and
//! backward passes, softmax cross-entropy, dropout, Adam, the CNN and MLP
//! fragment classifiers, and a binary model format.

pub mod adam;
pub mod io;
pub mod layers;
pub mod network;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use layers::{
    conv2d_backward, conv2d_forward, cross_entropy_loss, dense_backward, dense_forward, dropout_forward,
    leaky_relu, max_pool_2x2, relu, softmax, softmax_cross_entropy_grad, ConvLayer, DenseLayer,
};
pub use network::{build_cnn, build_mlp, CnnConfig, Gradients, Layer, MlpConfig, Network};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: u8, classes: usize },
    #[error("dropout rate must be in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("backward called without a cached training forward pass")]
    NoForwardCache,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
