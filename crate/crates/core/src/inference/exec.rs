use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::graph::{Activation, Conv2d, ConvParams, Layer, ModelGraph};
use super::requant::{quantize_value, Requantizer};
use super::tensor::{Shape, Tensor, TensorData};
use super::{InferenceError, Result};
use crate::scalar::Scalar;

/// How convolutions are scheduled. Both produce bit-identical results: the
/// parallel backend only distributes output channels across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    #[default]
    Single,
    Parallel,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Single => "single",
            Backend::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "single" => Ok(Backend::Single),
            "parallel" => Ok(Backend::Parallel),
            other => Err(format!("unknown backend `{other}` (expected single or parallel)")),
        }
    }
}

fn for_each_plane<E: Send>(out: &mut [E], plane: usize, backend: Backend, f: impl Fn(usize, &mut [E]) + Sync + Send) {
    match backend {
        Backend::Single => out.chunks_mut(plane).enumerate().for_each(|(oc, p)| f(oc, p)),
        Backend::Parallel => out.par_chunks_mut(plane).enumerate().for_each(|(oc, p)| f(oc, p)),
    }
}

/// Accumulate one kernel tap over a whole output plane.
///
/// Output `(y, x)` reads input `(y + ky - ph, x + kx - pw)`; taps falling in
/// the zero padding contribute nothing and are skipped.
#[inline]
fn tap<A, E>(acc: &mut [A], input: &[E], h: usize, w: usize, dy: isize, dx: isize, mac: impl Fn(&mut A, E))
where
    E: Copy,
{
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in 0..h {
        let iy = y as isize + dy;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let in_row = &input[iy as usize * w..(iy as usize + 1) * w];
        let out_row = &mut acc[y * w..(y + 1) * w];
        let ix0 = (x0 as isize + dx) as usize;
        for (o, &i) in out_row[x0..x1].iter_mut().zip(&in_row[ix0..ix0 + (x1 - x0)]) {
            mac(o, i);
        }
    }
}

fn check_conv_input<T>(input: &Tensor<T>, conv: &Conv2d<T>, layer: usize) -> Result<Shape>
where
    T: Scalar,
{
    let s = input.shape();
    if s.channels != conv.in_ch {
        return Err(InferenceError::ChannelMismatch {
            layer,
            expected: conv.in_ch,
            found: s.channels,
        });
    }
    Ok(s)
}

/// Float convolution with zero "same" padding.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, conv: &Conv2d<T>) -> Result<Tensor<T>> {
    conv2d_float(input, conv, Backend::Single, 0)
}

fn conv2d_float<T: Scalar>(input: &Tensor<T>, conv: &Conv2d<T>, backend: Backend, layer: usize) -> Result<Tensor<T>> {
    let s = check_conv_input(input, conv, layer)?;
    let (ConvParams::Float { weights, bias }, Some(data)) = (&conv.params, input.as_float()) else {
        return Err(InferenceError::ElementKind { layer });
    };
    let (h, w) = (s.height, s.width);
    let plane = h * w;
    let (ph, pw) = ((conv.kh / 2) as isize, (conv.kw / 2) as isize);
    let ksize = conv.in_ch * conv.kh * conv.kw;
    let mut out = vec![T::zero(); conv.out_ch * plane];
    for_each_plane(&mut out, plane, backend, |oc, acc| {
        acc.fill(bias[oc]);
        let kernel = &weights[oc * ksize..(oc + 1) * ksize];
        for ic in 0..conv.in_ch {
            let src = &data[ic * plane..(ic + 1) * plane];
            for ky in 0..conv.kh {
                for kx in 0..conv.kw {
                    let wv = kernel[(ic * conv.kh + ky) * conv.kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    tap(acc, src, h, w, ky as isize - ph, kx as isize - pw, |o, i| *o += wv * i);
                }
            }
        }
    });
    Tensor::from_float(Shape::new(conv.out_ch, h, w), out)
}

/// Int8 convolution: 32-bit accumulation, exact requantization to `output_scale`.
pub fn conv2d_int8<T: Scalar>(input: &Tensor<T>, conv: &Conv2d<T>, output_scale: f32, backend: Backend) -> Result<Tensor<T>> {
    conv2d_quant(input, conv, output_scale, backend, 0)
}

fn conv2d_quant<T: Scalar>(
    input: &Tensor<T>,
    conv: &Conv2d<T>,
    output_scale: f32,
    backend: Backend,
    layer: usize,
) -> Result<Tensor<T>> {
    let s = check_conv_input(input, conv, layer)?;
    let (
        ConvParams::Int8 {
            weights,
            weight_scale,
            bias,
        },
        TensorData::Int8 { values, scale },
    ) = (&conv.params, input.data())
    else {
        return Err(InferenceError::ElementKind { layer });
    };
    let requant = Requantizer::new(*scale, *weight_scale, output_scale)?;
    let (h, w) = (s.height, s.width);
    let plane = h * w;
    let (ph, pw) = ((conv.kh / 2) as isize, (conv.kw / 2) as isize);
    let ksize = conv.in_ch * conv.kh * conv.kw;
    let mut out = vec![0i8; conv.out_ch * plane];
    for_each_plane(&mut out, plane, backend, |oc, dst| {
        let mut acc = vec![0i32; plane];
        let kernel = &weights[oc * ksize..(oc + 1) * ksize];
        for ic in 0..conv.in_ch {
            let src = &values[ic * plane..(ic + 1) * plane];
            for ky in 0..conv.kh {
                for kx in 0..conv.kw {
                    let wv = kernel[(ic * conv.kh + ky) * conv.kw + kx] as i32;
                    if wv == 0 {
                        continue;
                    }
                    tap(&mut acc, src, h, w, ky as isize - ph, kx as isize - pw, |o, i| *o += wv * i as i32);
                }
            }
        }
        let b = bias[oc] as i64;
        for (d, &a) in dst.iter_mut().zip(&acc) {
            *d = requant.apply(a as i64 + b);
        }
    });
    Tensor::from_int8(Shape::new(conv.out_ch, h, w), out, output_scale)
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct Inference<T> {
    pub output: Tensor<T>,
    /// Layer execution time only.
    pub forward_time: Duration,
}

pub fn run_model<T: Scalar>(graph: &ModelGraph<T>, input: &Tensor<T>) -> Result<Inference<T>> {
    run_model_with(graph, input, Backend::Single)
}

pub fn run_model_with<T: Scalar>(graph: &ModelGraph<T>, input: &Tensor<T>, backend: Backend) -> Result<Inference<T>> {
    run_observed(graph, input, backend, |_, _| {})
}

/// Forward pass calling `observe(layer_index, output)` after every layer of
/// a float graph. Int8 graphs ignore the observer.
pub fn run_observed<T: Scalar>(
    graph: &ModelGraph<T>,
    input: &Tensor<T>,
    backend: Backend,
    observe: impl FnMut(usize, &Tensor<T>),
) -> Result<Inference<T>> {
    let spec = graph.input_spec();
    let shape = input.shape();
    if shape.channels != spec.channels {
        return Err(InferenceError::InputMismatch {
            expected: spec.channels,
            found: shape,
        });
    }
    if input.is_quantized() {
        return Err(InferenceError::ElementKind { layer: 0 });
    }
    let start = Instant::now();
    let out = match graph.quant() {
        None => forward_float(graph, input, backend, observe)?,
        Some(_) => forward_int8(graph, input, backend)?,
    };
    let forward_time = start.elapsed();
    let (lo, hi) = (T::of_f32(spec.range.0), T::of_f32(spec.range.1));
    let output = Tensor::from_float(out.shape(), out.dequantize().into_iter().map(|v| v.max(lo).min(hi)).collect())?;
    Ok(Inference { output, forward_time })
}

fn add_float<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(InferenceError::ShapeMismatch {
            layer,
            expected: b.shape(),
            found: a.shape(),
        });
    }
    let (Some(x), Some(y)) = (a.as_float(), b.as_float()) else {
        return Err(InferenceError::ElementKind { layer });
    };
    Tensor::from_float(a.shape(), x.iter().zip(y).map(|(&p, &q)| p + q).collect())
}

fn forward_float<T: Scalar>(
    graph: &ModelGraph<T>,
    input: &Tensor<T>,
    backend: Backend,
    mut observe: impl FnMut(usize, &Tensor<T>),
) -> Result<Tensor<T>> {
    let keep = graph.residual_sources();
    let mut saved: Vec<Option<Tensor<T>>> = vec![None; keep.len()];
    if keep[0] {
        saved[0] = Some(input.clone());
    }
    let mut current = input.clone();
    for (i, layer) in graph.layers().iter().enumerate() {
        current = match layer {
            Layer::Conv2d(c) => conv2d_float(&current, c, backend, i)?,
            Layer::Activation(a) => {
                let f: fn(T) -> T = match a {
                    Activation::Relu => |v| v.max(T::zero()),
                    Activation::Tanh => |v| v.tanh(),
                };
                let shape = current.shape();
                let data = current.into_float().ok_or(InferenceError::ElementKind { layer: i })?;
                Tensor::from_float(shape, data.into_iter().map(f).collect())?
            }
            Layer::PixelShuffle { scale } => current.pixel_shuffle(*scale).map_err(|e| e.at_layer(i))?,
            Layer::ResidualAdd { source } => {
                let other = saved[*source].as_ref().ok_or(InferenceError::Invariant {
                    layer: Some(i),
                    reason: format!("residual source {source} was not recorded"),
                })?;
                add_float(&current, other, i)?
            }
        };
        observe(i, &current);
        if keep[i + 1] {
            saved[i + 1] = Some(current.clone());
        }
    }
    Ok(current)
}

fn quantize_tensor<T: Scalar>(t: &Tensor<T>, scale: f32) -> Result<Tensor<T>> {
    let values = t.dequantize().into_iter().map(|v| quantize_value(v.to_f64_lossy(), scale)).collect();
    Tensor::from_int8(t.shape(), values, scale)
}

fn real_values<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    match t.data() {
        TensorData::Float(v) => v.iter().map(|x| x.to_f64_lossy()).collect(),
        TensorData::Int8 { values, scale } => values.iter().map(|&q| q as f64 * *scale as f64).collect(),
    }
}

/// Int8 execution. The graph input is quantized at entry; a residual add
/// that reads the graph input uses its original float values, and a final
/// residual add emits its sum without requantizing.
fn forward_int8<T: Scalar>(graph: &ModelGraph<T>, input: &Tensor<T>, backend: Backend) -> Result<Tensor<T>> {
    let quant = graph.quant().expect("int8 graph");
    let keep = graph.residual_sources();
    let mut saved: Vec<Option<Tensor<T>>> = vec![None; keep.len()];
    let mut current = quantize_tensor(input, quant.input_scale)?;
    let last = graph.layers().len().saturating_sub(1);
    for (i, layer) in graph.layers().iter().enumerate() {
        let out_scale = quant.output_scales[i];
        current = match layer {
            Layer::Conv2d(c) => conv2d_quant(&current, c, out_scale, backend, i)?,
            Layer::Activation(Activation::Relu) => {
                let TensorData::Int8 { values, scale } = current.data() else {
                    return Err(InferenceError::ElementKind { layer: i });
                };
                Tensor::from_int8(current.shape(), values.iter().map(|&q| q.max(0)).collect(), *scale)?
            }
            Layer::Activation(Activation::Tanh) => {
                let values = real_values(&current).into_iter().map(|v| quantize_value(v.tanh(), out_scale)).collect();
                Tensor::from_int8(current.shape(), values, out_scale)?
            }
            Layer::PixelShuffle { scale } => current.pixel_shuffle(*scale).map_err(|e| e.at_layer(i))?,
            Layer::ResidualAdd { source } => {
                let other_real = if *source == 0 {
                    real_values(input)
                } else {
                    let other = saved[*source].as_ref().ok_or(InferenceError::Invariant {
                        layer: Some(i),
                        reason: format!("residual source {source} was not recorded"),
                    })?;
                    if other.shape() != current.shape() {
                        return Err(InferenceError::ShapeMismatch {
                            layer: i,
                            expected: other.shape(),
                            found: current.shape(),
                        });
                    }
                    real_values(other)
                };
                if other_real.len() != current.shape().len() {
                    return Err(InferenceError::ShapeMismatch {
                        layer: i,
                        expected: input.shape(),
                        found: current.shape(),
                    });
                }
                let sum = real_values(&current).into_iter().zip(other_real).map(|(a, b)| a + b);
                if i == last {
                    Tensor::from_float(current.shape(), sum.map(T::from_f64_lossy).collect())?
                } else {
                    Tensor::from_int8(current.shape(), sum.map(|v| quantize_value(v, out_scale)).collect(), out_scale)?
                }
            }
        };
        if keep[i + 1] {
            saved[i + 1] = Some(current.clone());
        }
    }
    Ok(current)
}
