//! `.mvdnn` model container.
//!
//! ```text
//! "MVDN" | version: u16 LE | manifest length: u32 LE | manifest (JSON) | blobs
//! ```
//!
//! The manifest lists the layers and a tensor table; the blobs follow
//! back to back in table order. `f32`, `i8` and `i32` values are stored
//! little-endian.

use serde::{Deserialize, Serialize};

use super::graph::{Activation, Conv2d, ConvParams, InputSpec, Layer, ModelGraph, QuantParams};
use super::{InferenceError, Result};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"MVDN";
pub const VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ElementKind {
    Float32,
    Int8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BlobType {
    F32,
    I8,
    I32,
}

impl BlobType {
    fn width(self) -> usize {
        match self {
            BlobType::F32 | BlobType::I32 => 4,
            BlobType::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    dtype: BlobType,
    count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerEntry {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        weights: String,
        bias: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight_scale: Option<f32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_scale: Option<f32>,
    },
    Activation {
        function: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_scale: Option<f32>,
    },
    ResidualAdd {
        source: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_scale: Option<f32>,
    },
    PixelShuffle {
        scale: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_scale: Option<f32>,
    },
}

impl LayerEntry {
    fn output_scale(&self) -> Option<f32> {
        match self {
            LayerEntry::Conv2d { output_scale, .. }
            | LayerEntry::Activation { output_scale, .. }
            | LayerEntry::ResidualAdd { output_scale, .. }
            | LayerEntry::PixelShuffle { output_scale, .. } => *output_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InputEntry {
    channels: usize,
    range: [f32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    architecture: String,
    element: ElementKind,
    upscale: usize,
    input: InputEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_scale: Option<f32>,
    layers: Vec<LayerEntry>,
    tensors: Vec<BlobEntry>,
}

/// Serialize a graph. Float parameters are written as `f32`.
pub fn save_model<T: Scalar>(graph: &ModelGraph<T>) -> Vec<u8> {
    let quant = graph.quant();
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(graph.layers().len());
    for (i, layer) in graph.layers().iter().enumerate() {
        let output_scale = quant.map(|q| q.output_scales[i]);
        let entry = match layer {
            Layer::Conv2d(c) => {
                let wname = format!("layer{i}.weight");
                let bname = format!("layer{i}.bias");
                let weight_scale = match &c.params {
                    ConvParams::Float { weights, bias } => {
                        for v in weights.iter().chain(bias) {
                            blob.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
                        }
                        tensors.push(BlobEntry { name: wname.clone(), dtype: BlobType::F32, count: weights.len() });
                        tensors.push(BlobEntry { name: bname.clone(), dtype: BlobType::F32, count: bias.len() });
                        None
                    }
                    ConvParams::Int8 { weights, weight_scale, bias } => {
                        blob.extend(weights.iter().map(|&w| w as u8));
                        for b in bias {
                            blob.extend_from_slice(&b.to_le_bytes());
                        }
                        tensors.push(BlobEntry { name: wname.clone(), dtype: BlobType::I8, count: weights.len() });
                        tensors.push(BlobEntry { name: bname.clone(), dtype: BlobType::I32, count: bias.len() });
                        Some(*weight_scale)
                    }
                };
                LayerEntry::Conv2d {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    kh: c.kh,
                    kw: c.kw,
                    weights: wname,
                    bias: bname,
                    weight_scale,
                    output_scale,
                }
            }
            Layer::Activation(a) => LayerEntry::Activation { function: a.as_str().to_string(), output_scale },
            Layer::ResidualAdd { source } => LayerEntry::ResidualAdd { source: *source, output_scale },
            Layer::PixelShuffle { scale } => LayerEntry::PixelShuffle { scale: *scale, output_scale },
        };
        layers.push(entry);
    }
    let input = graph.input_spec();
    let manifest = Manifest {
        architecture: graph.name().to_string(),
        element: if quant.is_some() { ElementKind::Int8 } else { ElementKind::Float32 },
        upscale: graph.upscale(),
        input: InputEntry { channels: input.channels, range: [input.range.0, input.range.1] },
        input_scale: quant.map(|q| q.input_scale),
        layers,
        tensors,
    };
    let text = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(PREAMBLE + text.len() + blob.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&blob);
    out
}

enum Blob {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

/// Parse and validate a container.
pub fn load_model<T: Scalar>(bytes: &[u8]) -> Result<ModelGraph<T>> {
    if bytes.len() < 4 {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        return Err(InferenceError::BadMagic(m));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(InferenceError::BadMagic(magic));
    }
    if bytes.len() < PREAMBLE {
        return Err(InferenceError::LengthMismatch {
            tensor: "preamble".into(),
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(InferenceError::UnsupportedVersion(version));
    }
    let mlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let rest = &bytes[PREAMBLE..];
    if rest.len() < mlen {
        return Err(InferenceError::LengthMismatch {
            tensor: "manifest".into(),
            expected: mlen,
            found: rest.len(),
        });
    }
    let manifest: Manifest =
        serde_json::from_slice(&rest[..mlen]).map_err(|e| InferenceError::Manifest(e.to_string()))?;

    let mut data = &rest[mlen..];
    let mut blobs = std::collections::HashMap::new();
    for t in &manifest.tensors {
        let need = t.count.checked_mul(t.dtype.width()).ok_or_else(|| InferenceError::Manifest(format!("tensor `{}` is too large", t.name)))?;
        if data.len() < need {
            return Err(InferenceError::LengthMismatch {
                tensor: t.name.clone(),
                expected: need,
                found: data.len(),
            });
        }
        let (chunk, tail) = data.split_at(need);
        data = tail;
        let blob = match t.dtype {
            BlobType::F32 => Blob::F32(chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
            BlobType::I32 => Blob::I32(chunk.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect()),
            BlobType::I8 => Blob::I8(chunk.iter().map(|&b| b as i8).collect()),
        };
        if blobs.insert(t.name.as_str(), blob).is_some() {
            return Err(InferenceError::Manifest(format!("duplicate tensor `{}`", t.name)));
        }
    }
    if !data.is_empty() {
        return Err(InferenceError::LengthMismatch {
            tensor: "trailing data".into(),
            expected: 0,
            found: data.len(),
        });
    }

    let quantized = manifest.element == ElementKind::Int8;
    let mut take = |name: &str| blobs.remove(name).ok_or_else(|| InferenceError::Manifest(format!("missing tensor `{name}`")));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut output_scales = Vec::new();
    for (i, entry) in manifest.layers.iter().enumerate() {
        if quantized {
            output_scales.push(entry.output_scale().ok_or_else(|| {
                InferenceError::Manifest(format!("layer {i} of an int8 model has no output scale"))
            })?);
        }
        let layer = match entry {
            LayerEntry::Conv2d { in_ch, out_ch, kh, kw, weights, bias, weight_scale, .. } => {
                let params = match (take(weights)?, take(bias)?, weight_scale) {
                    (Blob::F32(w), Blob::F32(b), None) if !quantized => ConvParams::Float {
                        weights: w.into_iter().map(T::of_f32).collect(),
                        bias: b.into_iter().map(T::of_f32).collect(),
                    },
                    (Blob::I8(w), Blob::I32(b), Some(s)) if quantized => ConvParams::Int8 {
                        weights: w,
                        weight_scale: *s,
                        bias: b,
                    },
                    _ => {
                        return Err(InferenceError::Manifest(format!(
                            "layer {i}: conv tensor types do not match the model element kind"
                        )))
                    }
                };
                Layer::Conv2d(Conv2d { in_ch: *in_ch, out_ch: *out_ch, kh: *kh, kw: *kw, params })
            }
            LayerEntry::Activation { function, .. } => Layer::Activation(match function.as_str() {
                "relu" => Activation::Relu,
                "tanh" => Activation::Tanh,
                other => return Err(InferenceError::Manifest(format!("layer {i}: unknown activation `{other}`"))),
            }),
            LayerEntry::ResidualAdd { source, .. } => Layer::ResidualAdd { source: *source },
            LayerEntry::PixelShuffle { scale, .. } => Layer::PixelShuffle { scale: *scale },
        };
        layers.push(layer);
    }
    if let Some(name) = blobs.keys().next() {
        return Err(InferenceError::Manifest(format!("tensor `{name}` is not used by any layer")));
    }
    let quant = if quantized {
        let input_scale = manifest
            .input_scale
            .ok_or_else(|| InferenceError::Manifest("int8 model has no input scale".into()))?;
        Some(QuantParams { input_scale, output_scales })
    } else {
        None
    };
    ModelGraph::from_parts(
        manifest.architecture,
        InputSpec {
            channels: manifest.input.channels,
            range: (manifest.input.range[0], manifest.input.range[1]),
        },
        manifest.upscale,
        layers,
        quant,
    )
}
