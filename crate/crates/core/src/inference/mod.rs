//! A small deterministic CNN executor.
//!
//! The layer set is limited to 2-D convolution, elementwise activation,
//! residual addition and pixel shuffle, over float and symmetric int8
//! tensors. Models are stored in the `.mvdnn` container (see [`container`]).

pub mod container;
mod exec;
mod graph;
pub mod requant;
mod tensor;

use thiserror::Error;

pub use container::{load_model, save_model};
pub use exec::{conv2d, conv2d_int8, run_model, run_model_with, run_observed, Backend, Inference};
pub use graph::{Activation, Conv2d, ConvParams, InputSpec, Layer, ModelGraph, QuantParams};
pub use tensor::{Shape, Tensor, TensorData};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("tensor {shape} needs {} values, got {len}", shape.len())]
    DataLength { shape: Shape, len: usize },
    #[error("quantization scale {0} is not a positive normal number")]
    BadScale(f32),
    #[error("pixel_shuffle: channels not divisible by r²: {channels} channels, r={scale}")]
    ShuffleChannels { channels: usize, scale: usize },
    #[error("space_to_depth: {shape} is not divisible into {scale}x{scale} blocks")]
    SpaceToDepth { shape: Shape, scale: usize },
    #[error("layer {layer}: expected {expected} input channels, found {found}")]
    ChannelMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        layer: usize,
        expected: Shape,
        found: Shape,
    },
    #[error("layer {layer}: tensor element kind does not match the layer")]
    ElementKind { layer: usize },
    #[error("graph expects {expected} input channels, got tensor {found}")]
    InputMismatch { expected: usize, found: Shape },
    #[error("invalid graph{}: {reason}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Invariant { layer: Option<usize>, reason: String },
    #[error("not a model container: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("length mismatch in `{tensor}`: expected {expected} bytes, found {found}")]
    LengthMismatch {
        tensor: String,
        expected: usize,
        found: usize,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl InferenceError {
    fn at_layer(self, layer: usize) -> Self {
        match self {
            InferenceError::ShuffleChannels { channels, scale } => InferenceError::Invariant {
                layer: Some(layer),
                reason: format!("channels not divisible by r²: {channels} channels, r={scale}"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, InferenceError>;
