use super::tensor::check_scale;
use super::{InferenceError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvParams<T> {
    Float {
        weights: Vec<T>,
        bias: Vec<T>,
    },
    /// Weights at `weight_scale`; bias pre-scaled to `input_scale * weight_scale`.
    Int8 {
        weights: Vec<i8>,
        weight_scale: f32,
        bias: Vec<i32>,
    },
}

/// 2-D convolution with zero "same" padding, weights laid out
/// `(out_ch, in_ch, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub params: ConvParams<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kh: usize, kw: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let conv = Self {
            in_ch,
            out_ch,
            kh,
            kw,
            params: ConvParams::Float { weights, bias },
        };
        conv.validate().map_err(|reason| InferenceError::Invariant { layer: None, reason })?;
        Ok(conv)
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kh * self.kw
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.params, ConvParams::Int8 { .. })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err("conv channel counts must be positive".into());
        }
        if self.kh % 2 == 0 || self.kw % 2 == 0 {
            return Err(format!("conv kernel {}x{} must have odd sides", self.kh, self.kw));
        }
        let (wlen, blen) = match &self.params {
            ConvParams::Float { weights, bias } => (weights.len(), bias.len()),
            ConvParams::Int8 {
                weights,
                weight_scale,
                bias,
            } => {
                check_scale(*weight_scale).map_err(|e| e.to_string())?;
                (weights.len(), bias.len())
            }
        };
        if wlen != self.weight_len() {
            return Err(format!("conv weights hold {wlen} values, expected {}", self.weight_len()));
        }
        if blen != self.out_ch {
            return Err(format!("conv bias holds {blen} values, expected {}", self.out_ch));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Activation(Activation),
    /// Adds a recorded tensor: 0 is the graph input, `i` the output of layer `i - 1`.
    ResidualAdd { source: usize },
    PixelShuffle { scale: usize },
}

impl<T> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Activation(_) => "activation",
            Layer::ResidualAdd { .. } => "residual_add",
            Layer::PixelShuffle { .. } => "pixel_shuffle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSpec {
    pub channels: usize,
    /// Output values are clamped to this range at graph exit.
    pub range: (f32, f32),
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            channels: 1,
            range: (0.0, 1.0),
        }
    }
}

/// Activation scales of an int8 graph.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub input_scale: f32,
    /// One output scale per layer.
    pub output_scales: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    name: String,
    input: InputSpec,
    upscale: usize,
    layers: Vec<Layer<T>>,
    quant: Option<QuantParams>,
}

impl<T: Scalar> ModelGraph<T> {
    /// Build and validate a float graph.
    pub fn new(name: impl Into<String>, input: InputSpec, upscale: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        Self::from_parts(name.into(), input, upscale, layers, None)
    }

    pub fn from_parts(
        name: String,
        input: InputSpec,
        upscale: usize,
        layers: Vec<Layer<T>>,
        quant: Option<QuantParams>,
    ) -> Result<Self> {
        let graph = Self {
            name,
            input,
            upscale,
            layers,
            quant,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// A graph with no layers; its output is the clamped input.
    pub fn identity(name: impl Into<String>) -> Self {
        Self::new(name, InputSpec::default(), 1, Vec::new()).expect("empty graph is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_spec(&self) -> InputSpec {
        self.input
    }

    pub fn upscale(&self) -> usize {
        self.upscale
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn quant(&self) -> Option<&QuantParams> {
        self.quant.as_ref()
    }

    pub fn is_quantized(&self) -> bool {
        self.quant.is_some()
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Conv2d(_))).count()
    }

    /// Channel count of the graph output.
    pub fn output_channels(&self) -> usize {
        self.walk().map(|c| c.0).unwrap_or(self.input.channels)
    }

    /// Check every layer and graph-level invariant.
    pub fn validate(&self) -> Result<()> {
        let fail = |layer: Option<usize>, reason: String| InferenceError::Invariant { layer, reason };
        if self.input.channels == 0 {
            return Err(fail(None, "input channels must be positive".into()));
        }
        let (lo, hi) = self.input.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(fail(None, format!("invalid value range [{lo}, {hi}]")));
        }
        if self.upscale == 0 {
            return Err(fail(None, "upscale factor must be at least 1".into()));
        }
        let quantized = self.quant.is_some();
        if let Some(q) = &self.quant {
            check_scale(q.input_scale)?;
            if q.output_scales.len() != self.layers.len() {
                return Err(fail(
                    None,
                    format!(
                        "{} output scales for {} layers",
                        q.output_scales.len(),
                        self.layers.len()
                    ),
                ));
            }
            for (i, s) in q.output_scales.iter().enumerate() {
                check_scale(*s).map_err(|e| fail(Some(i), e.to_string()))?;
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv2d(c) = layer {
                c.validate().map_err(|r| fail(Some(i), r))?;
                if c.is_quantized() != quantized {
                    return Err(fail(Some(i), "conv element kind differs from graph element kind".into()));
                }
            }
        }
        let (_, scale) = self.walk()?;
        if scale != self.upscale {
            return Err(fail(
                None,
                format!(
                    "pixel_shuffle scales multiply to {scale}, declared upscale factor is {}",
                    self.upscale
                ),
            ));
        }
        Ok(())
    }

    /// Propagate (channels, spatial scale) through the layers, checking
    /// chaining. Returns the final pair.
    fn walk(&self) -> Result<(usize, usize)> {
        let fail = |layer: usize, reason: String| InferenceError::Invariant {
            layer: Some(layer),
            reason,
        };
        // (channels, spatial scale, int8 scale) for every recorded tensor
        let q_in = self.quant.as_ref().map(|q| q.input_scale);
        let mut recorded = vec![(self.input.channels, 1usize, q_in)];
        for (i, layer) in self.layers.iter().enumerate() {
            let (ch, sc, qs) = recorded[i];
            let out_q = self.quant.as_ref().map(|q| q.output_scales[i]);
            let next = match layer {
                Layer::Conv2d(c) => {
                    if c.in_ch != ch {
                        return Err(InferenceError::ChannelMismatch {
                            layer: i,
                            expected: c.in_ch,
                            found: ch,
                        });
                    }
                    (c.out_ch, sc, out_q)
                }
                Layer::Activation(a) => {
                    if *a == Activation::Relu && out_q != qs {
                        return Err(fail(i, "relu must keep its input scale".into()));
                    }
                    (ch, sc, out_q)
                }
                Layer::PixelShuffle { scale: r } => {
                    if *r < 2 {
                        return Err(fail(i, format!("pixel_shuffle scale {r} must be at least 2")));
                    }
                    if ch % (r * r) != 0 {
                        return Err(fail(i, format!("channels not divisible by r²: {ch} channels, r={r}")));
                    }
                    if out_q != qs {
                        return Err(fail(i, "pixel_shuffle must keep its input scale".into()));
                    }
                    (ch / (r * r), sc * r, out_q)
                }
                Layer::ResidualAdd { source } => {
                    let Some(&(sch, ssc, _)) = recorded.get(*source) else {
                        return Err(fail(i, format!("residual source {source} is not an earlier tensor")));
                    };
                    if sch != ch || ssc != sc {
                        return Err(fail(
                            i,
                            format!("residual source {source} has {sch} channels at scale {ssc}, current is {ch} at {sc}"),
                        ));
                    }
                    (ch, sc, out_q)
                }
            };
            recorded.push(next);
        }
        let (ch, sc, _) = *recorded.last().unwrap();
        Ok((ch, sc))
    }

    /// Indices of recorded tensors consumed by residual layers.
    pub(crate) fn residual_sources(&self) -> Vec<bool> {
        let mut used = vec![false; self.layers.len() + 1];
        for l in &self.layers {
            if let Layer::ResidualAdd { source } = l {
                used[*source] = true;
            }
        }
        used
    }

    /// The same graph with float parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    kh: c.kh,
                    kw: c.kw,
                    params: match &c.params {
                        ConvParams::Float { weights, bias } => ConvParams::Float {
                            weights: conv(weights),
                            bias: conv(bias),
                        },
                        ConvParams::Int8 {
                            weights,
                            weight_scale,
                            bias,
                        } => ConvParams::Int8 {
                            weights: weights.clone(),
                            weight_scale: *weight_scale,
                            bias: bias.clone(),
                        },
                    },
                }),
                Layer::Activation(a) => Layer::Activation(*a),
                Layer::ResidualAdd { source } => Layer::ResidualAdd { source: *source },
                Layer::PixelShuffle { scale } => Layer::PixelShuffle { scale: *scale },
            })
            .collect();
        ModelGraph {
            name: self.name.clone(),
            input: self.input,
            upscale: self.upscale,
            layers,
            quant: self.quant.clone(),
        }
    }
}
