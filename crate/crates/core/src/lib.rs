//! Benchmark core for DNN-based video enhancement.
//!
//! - [`video_io`]: Y4M / raw I420 reading and writing
//! - [`inference`]: float and int8 CNN executor and the `.mvdnn` container
//! - [`models`]: ESPCN, EVSRNet and DnCNN builders, calibration, quantization
//! - [`metrics`]: PSNR, SSIM and timing aggregation
//! - [`pipeline`]: the frame-by-frame DNN test and its CSV report
//!
//! Float math is generic over [`Scalar`] (`f32`, `f64`); the aliases below
//! fix it to `f32`, the type stored in model containers.

pub mod inference;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod video_io;

pub use scalar::Scalar;

pub type Tensor = inference::Tensor<f32>;
pub type ModelGraph = inference::ModelGraph<f32>;
pub type Layer = inference::Layer<f32>;
pub type Conv2d = inference::Conv2d<f32>;
pub type Inference = inference::Inference<f32>;
