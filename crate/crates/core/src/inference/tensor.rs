use std::fmt;

use super::{InferenceError, Result};
use crate::scalar::Scalar;

/// Channel-major tensor geometry (no batch dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData<T> {
    Float(Vec<T>),
    /// Symmetric int8: real value = `value * scale`, zero point fixed at 0.
    Int8 { values: Vec<i8>, scale: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: TensorData<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_float(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(InferenceError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: TensorData::Float(data),
        })
    }

    pub fn from_int8(shape: Shape, values: Vec<i8>, scale: f32) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(InferenceError::DataLength {
                shape,
                len: values.len(),
            });
        }
        check_scale(scale)?;
        Ok(Self {
            shape,
            data: TensorData::Int8 { values, scale },
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: TensorData::Float(vec![T::zero(); shape.len()]),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &TensorData<T> {
        &self.data
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.data, TensorData::Int8 { .. })
    }

    pub fn as_float(&self) -> Option<&[T]> {
        match &self.data {
            TensorData::Float(v) => Some(v),
            TensorData::Int8 { .. } => None,
        }
    }

    pub fn into_float(self) -> Option<Vec<T>> {
        match self.data {
            TensorData::Float(v) => Some(v),
            TensorData::Int8 { .. } => None,
        }
    }

    pub fn quant_scale(&self) -> Option<f32> {
        match self.data {
            TensorData::Int8 { scale, .. } => Some(scale),
            TensorData::Float(_) => None,
        }
    }

    /// Real values, converting int8 data through its scale.
    pub fn dequantize(&self) -> Vec<T> {
        match &self.data {
            TensorData::Float(v) => v.clone(),
            TensorData::Int8 { values, scale } => {
                let s = T::of_f32(*scale);
                values.iter().map(|&q| T::from_i8(q).unwrap() * s).collect()
            }
        }
    }

    /// Rearrange `r*r` channel groups into an `r`-times larger spatial grid.
    ///
    /// `out[c, y*r + dy, x*r + dx] = in[c*r*r + dy*r + dx, y, x]`
    pub fn pixel_shuffle(&self, r: usize) -> Result<Self> {
        let s = self.shape;
        if r < 2 || s.channels % (r * r) != 0 {
            return Err(InferenceError::ShuffleChannels {
                channels: s.channels,
                scale: r,
            });
        }
        let out = Shape::new(s.channels / (r * r), s.height * r, s.width * r);
        let data = match &self.data {
            TensorData::Float(v) => TensorData::Float(shuffle(v, s, r)),
            TensorData::Int8 { values, scale } => TensorData::Int8 {
                values: shuffle(values, s, r),
                scale: *scale,
            },
        };
        Ok(Self { shape: out, data })
    }

    /// Inverse of [`Tensor::pixel_shuffle`].
    pub fn space_to_depth(&self, r: usize) -> Result<Self> {
        let s = self.shape;
        if r < 2 || s.height % r != 0 || s.width % r != 0 {
            return Err(InferenceError::SpaceToDepth { shape: s, scale: r });
        }
        let out = Shape::new(s.channels * r * r, s.height / r, s.width / r);
        let data = match &self.data {
            TensorData::Float(v) => TensorData::Float(unshuffle(v, out, r)),
            TensorData::Int8 { values, scale } => TensorData::Int8 {
                values: unshuffle(values, out, r),
                scale: *scale,
            },
        };
        Ok(Self { shape: out, data })
    }
}

pub(crate) fn check_scale(scale: f32) -> Result<()> {
    if scale.is_normal() && scale > 0.0 {
        Ok(())
    } else {
        Err(InferenceError::BadScale(scale))
    }
}

fn shuffle<E: Copy + Default>(src: &[E], s: Shape, r: usize) -> Vec<E> {
    let (h, w) = (s.height, s.width);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![E::default(); src.len()];
    for (ic, plane) in src.chunks_exact(h * w).enumerate() {
        let c = ic / (r * r);
        let dy = (ic % (r * r)) / r;
        let dx = ic % r;
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..h {
            let row = &mut dst[(y * r + dy) * ow..(y * r + dy + 1) * ow];
            for (x, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                row[x * r + dx] = v;
            }
        }
    }
    out
}

fn unshuffle<E: Copy + Default>(src: &[E], out: Shape, r: usize) -> Vec<E> {
    let (h, w) = (out.height, out.width);
    let iw = w * r;
    let mut dst = vec![E::default(); src.len()];
    for (oc, plane) in dst.chunks_exact_mut(h * w).enumerate() {
        let c = oc / (r * r);
        let dy = (oc % (r * r)) / r;
        let dx = oc % r;
        let src_plane = &src[c * h * r * iw..(c + 1) * h * r * iw];
        for y in 0..h {
            let row = &src_plane[(y * r + dy) * iw..(y * r + dy + 1) * iw];
            for x in 0..w {
                plane[y * w + x] = row[x * r + dx];
            }
        }
    }
    dst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_shuffle() {
        let t = Tensor::from_float(Shape::new(4, 1, 1), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let o = t.pixel_shuffle(2).unwrap();
        assert_eq!(o.shape(), Shape::new(1, 2, 2));
        assert_eq!(o.as_float().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_matches_index_oracle() {
        let s = Shape::new(8, 2, 2);
        let t = Tensor::from_float(s, (0..32).map(|v| v as f64).collect()).unwrap();
        let o = t.pixel_shuffle(2).unwrap();
        assert_eq!(o.shape(), Shape::new(2, 4, 4));
        let out = o.as_float().unwrap();
        for c in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let src = ((c * 4 + dy * 2 + dx) * 2 + y) * 2 + x;
                            let dst = (c * 4 + y * 2 + dy) * 4 + x * 2 + dx;
                            assert_eq!(out[dst], src as f64);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn indivisible_channels_rejected() {
        let t = Tensor::<f32>::zeros(Shape::new(6, 2, 2));
        assert!(matches!(
            t.pixel_shuffle(2),
            Err(InferenceError::ShuffleChannels { channels: 6, scale: 2 })
        ));
        assert!(t.pixel_shuffle(1).is_err());
    }

    #[test]
    fn int8_shuffle_keeps_scale() {
        let t = Tensor::<f32>::from_int8(Shape::new(4, 1, 1), vec![1, -2, 3, -4], 0.5).unwrap();
        let o = t.pixel_shuffle(2).unwrap();
        assert_eq!(o.quant_scale(), Some(0.5));
        assert_eq!(o.dequantize(), vec![0.5, -1.0, 1.5, -2.0]);
        assert_eq!(o.space_to_depth(2).unwrap(), t);
    }

    #[test]
    fn constructors_validate() {
        assert!(Tensor::<f32>::from_float(Shape::new(1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_int8(Shape::new(1, 1, 1), vec![0], 0.0).is_err());
        assert!(Tensor::<f32>::from_int8(Shape::new(1, 1, 1), vec![0], f32::NAN).is_err());
    }
}
