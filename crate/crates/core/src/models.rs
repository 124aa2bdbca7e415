//! Reference ESPCN, EVSRNet and DnCNN builders and post-training int8
//! quantization.
//!
//! Builders produce fixture weights from a seeded generator (they are not
//! trained); batch normalization is assumed folded into the convolutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::inference::requant::{quantize_value, QMAX};
use crate::inference::{
    self, run_observed, Activation, Backend, Conv2d, ConvParams, InferenceError, InputSpec, Layer, ModelGraph,
    QuantParams,
};
use crate::scalar::Scalar;
use crate::video_io::{frame_to_tensor, TensorLayout, VideoSequence};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture config: {0}")]
    Config(String),
    #[error("calibration needs a float graph")]
    AlreadyQuantized,
    #[error("calibration needs at least one frame")]
    NoFrames,
    #[error("calibration stats cover {stats} layers, graph has {graph}")]
    StatsMismatch { stats: usize, graph: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Espcn,
    Evsrnet,
    Dncnn,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Espcn => "espcn",
            ArchKind::Evsrnet => "evsrnet",
            ArchKind::Dncnn => "dncnn",
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "espcn" => Ok(ArchKind::Espcn),
            "evsrnet" => Ok(ArchKind::Evsrnet),
            "dncnn" => Ok(ArchKind::Dncnn),
            other => Err(format!("unknown architecture `{other}` (expected espcn, evsrnet or dncnn)")),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub kind: ArchKind,
    /// Upscale factor; 1 for DnCNN.
    pub scale: usize,
    /// EVSRNet residual block count.
    pub blocks: usize,
    /// ESPCN: two widths. EVSRNet and DnCNN: one width.
    pub features: Vec<usize>,
    /// DnCNN total convolution count.
    pub depth: usize,
    pub seed: u64,
}

impl ArchConfig {
    pub fn espcn(scale: usize) -> Self {
        Self {
            kind: ArchKind::Espcn,
            scale,
            blocks: 0,
            features: vec![64, 32],
            depth: 0,
            seed: 0,
        }
    }

    pub fn evsrnet(scale: usize) -> Self {
        Self {
            kind: ArchKind::Evsrnet,
            scale,
            blocks: 5,
            features: vec![32],
            depth: 0,
            seed: 0,
        }
    }

    pub fn dncnn() -> Self {
        Self {
            kind: ArchKind::Dncnn,
            scale: 1,
            blocks: 0,
            features: vec![64],
            depth: 17,
            seed: 0,
        }
    }

    /// Defaults for `kind`, with `scale` applied to the super-resolution models.
    pub fn for_kind(kind: ArchKind, scale: usize) -> Self {
        match kind {
            ArchKind::Espcn => Self::espcn(scale),
            ArchKind::Evsrnet => Self::evsrnet(scale),
            ArchKind::Dncnn => Self { scale, ..Self::dncnn() },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.features.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        match self.kind {
            ArchKind::Espcn | ArchKind::Evsrnet if self.scale < 2 => {
                bad(format!("{} needs scale >= 2, got {}", self.kind.as_str(), self.scale))
            }
            ArchKind::Espcn if self.features.len() != 2 => bad("espcn takes two feature widths".into()),
            ArchKind::Evsrnet if self.features.len() != 1 => bad("evsrnet takes one feature width".into()),
            ArchKind::Dncnn if self.scale != 1 => bad(format!("dncnn is resolution-preserving, got scale {}", self.scale)),
            ArchKind::Dncnn if self.features.len() != 1 => bad("dncnn takes one feature width".into()),
            ArchKind::Dncnn if self.depth < 2 => bad(format!("dncnn depth must be at least 2, got {}", self.depth)),
            _ => Ok(()),
        }
    }
}

struct WeightSource(ChaCha8Rng);

impl WeightSource {
    /// Conv with weights and bias uniform in (-k, k), k = 1/sqrt(fan_in).
    fn conv<T: Scalar>(&mut self, in_ch: usize, out_ch: usize, k: usize) -> Layer<T> {
        let bound = 1.0 / ((in_ch * k * k) as f32).sqrt();
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::of_f32(self.0.gen_range(-bound..bound))).collect() };
        let weights = draw(out_ch * in_ch * k * k);
        let bias = draw(out_ch);
        Layer::Conv2d(Conv2d::new(in_ch, out_ch, k, k, weights, bias).expect("builder shapes are consistent"))
    }
}

/// Build the reference graph for `cfg` with seeded fixture weights.
pub fn build_architecture<T: Scalar>(cfg: &ArchConfig) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let mut src = WeightSource(ChaCha8Rng::seed_from_u64(cfg.seed));
    let r = cfg.scale;
    let relu = || Layer::Activation(Activation::Relu);
    let layers = match cfg.kind {
        ArchKind::Espcn => {
            let (f1, f2) = (cfg.features[0], cfg.features[1]);
            vec![
                src.conv(1, f1, 5),
                Layer::Activation(Activation::Tanh),
                src.conv(f1, f2, 3),
                relu(),
                src.conv(f2, r * r, 3),
                Layer::PixelShuffle { scale: r },
            ]
        }
        ArchKind::Evsrnet => {
            let c = cfg.features[0];
            let mut layers = vec![src.conv(1, c, 3), relu()];
            for _ in 0..cfg.blocks {
                // recorded index of the block input
                let source = layers.len();
                layers.push(src.conv(c, c, 3));
                layers.push(relu());
                layers.push(src.conv(c, c, 3));
                layers.push(Layer::ResidualAdd { source });
            }
            layers.push(relu());
            layers.push(src.conv(c, r * r, 3));
            layers.push(Layer::PixelShuffle { scale: r });
            layers
        }
        ArchKind::Dncnn => {
            let c = cfg.features[0];
            let mut layers = vec![src.conv(1, c, 3), relu()];
            for _ in 0..cfg.depth - 2 {
                layers.push(src.conv(c, c, 3));
                layers.push(relu());
            }
            // the last conv predicts the negated noise, so adding the input
            // yields input minus noise
            layers.push(src.conv(c, 1, 3));
            layers.push(Layer::ResidualAdd { source: 0 });
            layers
        }
    };
    Ok(ModelGraph::new(cfg.kind.as_str(), InputSpec::default(), r, layers)?)
}

/// Largest absolute activation seen at the graph input and after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStats {
    pub input_max_abs: f32,
    pub layer_max_abs: Vec<f32>,
    pub samples: usize,
}

impl CalibrationStats {
    /// Elementwise maximum of two stat sets over the same graph.
    pub fn merge(&self, other: &Self) -> Self {
        assert_eq!(self.layer_max_abs.len(), other.layer_max_abs.len(), "stats from different graphs");
        Self {
            input_max_abs: self.input_max_abs.max(other.input_max_abs),
            layer_max_abs: self
                .layer_max_abs
                .iter()
                .zip(&other.layer_max_abs)
                .map(|(a, b)| a.max(*b))
                .collect(),
            samples: self.samples + other.samples,
        }
    }
}

fn max_abs<T: Scalar>(v: &[T]) -> f32 {
    v.iter().fold(0.0f32, |m, x| m.max(x.abs().to_f32_lossy()))
}

/// Run up to `max_frames` frames (luma only) through a float graph and
/// record per-layer activation ranges.
pub fn calibrate<T: Scalar>(graph: &ModelGraph<T>, frames: &VideoSequence, max_frames: usize) -> Result<CalibrationStats> {
    if graph.is_quantized() {
        return Err(ModelError::AlreadyQuantized);
    }
    let count = max_frames.min(frames.len());
    if count == 0 {
        return Err(ModelError::NoFrames);
    }
    let mut stats = CalibrationStats {
        input_max_abs: 0.0,
        layer_max_abs: vec![0.0; graph.layers().len()],
        samples: count,
    };
    for frame in &frames.frames()[..count] {
        let input = frame_to_tensor::<T>(frame, TensorLayout::YOnly);
        stats.input_max_abs = stats.input_max_abs.max(max_abs(input.as_float().unwrap()));
        run_observed(graph, &input, Backend::Single, |i, out| {
            let m = max_abs(&out.dequantize());
            stats.layer_max_abs[i] = stats.layer_max_abs[i].max(m);
        })?;
    }
    Ok(stats)
}

/// Symmetric per-tensor scale: `max_abs / 127`, or 1.0 for an all-zero tensor.
pub fn symmetric_scale(max_abs: f32) -> f32 {
    let s = (max_abs as f64 / QMAX as f64) as f32;
    if s.is_normal() {
        s
    } else {
        1.0
    }
}

/// Convert a float graph into an int8 graph using calibration stats.
///
/// ReLU and pixel shuffle keep their input scale; every other layer takes
/// its output scale from the recorded activation range.
pub fn quantize_graph<T: Scalar>(graph: &ModelGraph<T>, stats: &CalibrationStats) -> Result<ModelGraph<T>> {
    if graph.is_quantized() {
        return Err(ModelError::AlreadyQuantized);
    }
    if stats.layer_max_abs.len() != graph.layers().len() {
        return Err(ModelError::StatsMismatch {
            stats: stats.layer_max_abs.len(),
            graph: graph.layers().len(),
        });
    }
    let input_scale = symmetric_scale(stats.input_max_abs);
    let mut scale = input_scale;
    let mut output_scales = Vec::with_capacity(graph.layers().len());
    let mut layers = Vec::with_capacity(graph.layers().len());
    for (i, layer) in graph.layers().iter().enumerate() {
        let recorded = symmetric_scale(stats.layer_max_abs[i]);
        let (layer, out_scale) = match layer {
            Layer::Conv2d(c) => {
                let ConvParams::Float { weights, bias } = &c.params else {
                    return Err(ModelError::AlreadyQuantized);
                };
                let weight_scale = symmetric_scale(max_abs(weights));
                let qweights = weights.iter().map(|w| quantize_value(w.to_f64_lossy(), weight_scale)).collect();
                let acc_scale = scale as f64 * weight_scale as f64;
                let qbias = bias
                    .iter()
                    .map(|b| (b.to_f64_lossy() / acc_scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                    .collect();
                let conv = Conv2d {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    kh: c.kh,
                    kw: c.kw,
                    params: ConvParams::Int8 {
                        weights: qweights,
                        weight_scale,
                        bias: qbias,
                    },
                };
                (Layer::Conv2d(conv), recorded)
            }
            Layer::Activation(Activation::Relu) => (Layer::Activation(Activation::Relu), scale),
            Layer::Activation(Activation::Tanh) => (Layer::Activation(Activation::Tanh), recorded),
            Layer::PixelShuffle { scale: r } => (Layer::PixelShuffle { scale: *r }, scale),
            Layer::ResidualAdd { source } => (Layer::ResidualAdd { source: *source }, recorded),
        };
        output_scales.push(out_scale);
        layers.push(layer);
        scale = out_scale;
    }
    Ok(ModelGraph::from_parts(
        graph.name().to_string(),
        graph.input_spec(),
        graph.upscale(),
        layers,
        Some(QuantParams {
            input_scale,
            output_scales,
        }),
    )?)
}

/// Serialized container size in bytes.
pub fn container_size<T: Scalar>(graph: &ModelGraph<T>) -> usize {
    inference::save_model(graph).len()
}
