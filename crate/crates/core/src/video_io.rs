//! Uncompressed planar YUV 4:2:0 video: Y4M and headerless raw planes.
//!
//! Frames are kept in file order, which is also display order. Only 8-bit
//! 4:2:0 content with even dimensions is accepted.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::inference::{Shape, Tensor};
use crate::scalar::Scalar;

const Y4M_SIGNATURE: &[u8] = b"YUV4MPEG2";
const FRAME_MARKER: &[u8] = b"FRAME";
/// Private extension token used to carry the colour primaries tag.
const PRIMARIES_TOKEN: &str = "XCOLORPRIM=";

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("byte {offset}: missing YUV4MPEG2 signature")]
    BadSignature { offset: usize },
    #[error("byte {offset}: malformed header: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("byte {offset}: unsupported colorspace `{colorspace}` (only 4:2:0 is accepted)")]
    UnsupportedColorspace { offset: usize, colorspace: String },
    #[error("byte {offset}: truncated frame {frame}: expected {expected} payload bytes, found {found}")]
    TruncatedFrame {
        offset: usize,
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("byte {offset}: expected FRAME marker for frame {frame}")]
    BadFrameMarker { offset: usize, frame: usize },
    #[error("invalid geometry {width}x{height}: {reason}")]
    Geometry {
        width: usize,
        height: usize,
        reason: &'static str,
    },
    #[error("invalid frame rate {num}/{den}")]
    FrameRate { num: u32, den: u32 },
    #[error("frame {index} is {found_w}x{found_h}, sequence is {width}x{height}")]
    MixedGeometry {
        index: usize,
        width: usize,
        height: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("tensor shape {0} cannot be converted to a frame")]
    TensorShape(Shape),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, VideoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ColorPrimaries {
    #[default]
    Bt601,
    Bt709,
}

impl ColorPrimaries {
    pub fn as_str(self) -> &'static str {
        match self {
            ColorPrimaries::Bt601 => "bt601",
            ColorPrimaries::Bt709 => "bt709",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "bt601" => Some(ColorPrimaries::Bt601),
            "bt709" => Some(ColorPrimaries::Bt709),
            _ => None,
        }
    }
}

/// Frame rate as an exact fraction of frames per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRate {
    num: u32,
    den: u32,
}

impl FrameRate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(VideoError::FrameRate { num, den });
        }
        Ok(Self { num, den })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.num, self.den)
    }
}

/// One 8-bit 4:2:0 picture.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    y: Vec<u8>,
    u: Vec<u8>,
    v: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

fn check_geometry(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(VideoError::Geometry {
            width,
            height,
            reason: "dimensions must be positive",
        });
    }
    if width % 2 != 0 || height % 2 != 0 {
        return Err(VideoError::Geometry {
            width,
            height,
            reason: "4:2:0 requires even dimensions",
        });
    }
    Ok(())
}

impl Frame {
    pub fn new(width: usize, height: usize, y: Vec<u8>, u: Vec<u8>, v: Vec<u8>) -> Result<Self> {
        check_geometry(width, height)?;
        let chroma = (width / 2) * (height / 2);
        if y.len() != width * height || u.len() != chroma || v.len() != chroma {
            return Err(VideoError::Geometry {
                width,
                height,
                reason: "plane lengths do not match geometry",
            });
        }
        Ok(Self {
            width,
            height,
            y,
            u,
            v,
        })
    }

    /// A frame with every sample of each plane set to the given values.
    pub fn filled(width: usize, height: usize, y: u8, u: u8, v: u8) -> Result<Self> {
        check_geometry(width, height)?;
        let chroma = (width / 2) * (height / 2);
        Self::new(
            width,
            height,
            vec![y; width * height],
            vec![u; chroma],
            vec![v; chroma],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn chroma_width(&self) -> usize {
        self.width / 2
    }

    pub fn chroma_height(&self) -> usize {
        self.height / 2
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn u(&self) -> &[u8] {
        &self.u
    }

    pub fn v(&self) -> &[u8] {
        &self.v
    }

    pub fn y_mut(&mut self) -> &mut [u8] {
        &mut self.y
    }

    pub fn u_mut(&mut self) -> &mut [u8] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [u8] {
        &mut self.v
    }

    /// Payload size in bytes (Y + U + V).
    pub fn byte_len(&self) -> usize {
        frame_byte_len(self.width, self.height)
    }

    pub fn write_planes<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(&self.y)?;
        out.write_all(&self.u)?;
        out.write_all(&self.v)
    }

    /// Replace the luma plane, upsampling chroma by `factor` with sample
    /// replication so the result stays 4:2:0.
    pub fn with_luma(&self, width: usize, height: usize, y: Vec<u8>, factor: usize) -> Result<Self> {
        let u = replicate_plane(&self.u, self.chroma_width(), self.chroma_height(), factor);
        let v = replicate_plane(&self.v, self.chroma_width(), self.chroma_height(), factor);
        Self::new(width, height, y, u, v)
    }
}

fn frame_byte_len(width: usize, height: usize) -> usize {
    width * height + 2 * (width / 2) * (height / 2)
}

fn replicate_plane(plane: &[u8], width: usize, height: usize, factor: usize) -> Vec<u8> {
    if factor == 1 {
        return plane.to_vec();
    }
    let out_w = width * factor;
    let mut out = Vec::with_capacity(out_w * height * factor);
    for row in plane.chunks_exact(width).take(height) {
        let start = out.len();
        for &s in row {
            out.extend(std::iter::repeat_n(s, factor));
        }
        for _ in 1..factor {
            out.extend_from_within(start..start + out_w);
        }
    }
    out
}

/// A clip of frames sharing one geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSequence {
    width: usize,
    height: usize,
    frame_rate: FrameRate,
    primaries: ColorPrimaries,
    frames: Vec<Frame>,
}

impl VideoSequence {
    pub fn new(
        width: usize,
        height: usize,
        frame_rate: FrameRate,
        primaries: ColorPrimaries,
        frames: Vec<Frame>,
    ) -> Result<Self> {
        check_geometry(width, height)?;
        for (index, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(VideoError::MixedGeometry {
                    index,
                    width,
                    height,
                    found_w: f.width,
                    found_h: f.height,
                });
            }
        }
        Ok(Self {
            width,
            height,
            frame_rate,
            primaries,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_rate(&self) -> FrameRate {
        self.frame_rate
    }

    pub fn primaries(&self) -> ColorPrimaries {
        self.primaries
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Parse a complete Y4M stream held in memory.
pub fn parse_y4m(bytes: &[u8]) -> Result<VideoSequence> {
    if !bytes.starts_with(Y4M_SIGNATURE) {
        return Err(VideoError::BadSignature { offset: 0 });
    }
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| VideoError::MalformedHeader {
            offset: bytes.len(),
            reason: "header line is not terminated".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| VideoError::MalformedHeader {
        offset: e.valid_up_to(),
        reason: "header is not valid UTF-8".into(),
    })?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(VideoError::BadSignature { offset: 0 });
    }

    let mut width = None;
    let mut height = None;
    let mut rate = None;
    let mut primaries = ColorPrimaries::default();
    let mut offset = Y4M_SIGNATURE.len() + 1;
    for token in tokens {
        let malformed = |reason: String| VideoError::MalformedHeader { offset, reason };
        if token.is_empty() {
            offset += 1;
            continue;
        }
        let (key, value) = token.split_at(1);
        match key {
            "W" => width = Some(parse_dim(value).ok_or_else(|| malformed(format!("bad width `{value}`")))?),
            "H" => height = Some(parse_dim(value).ok_or_else(|| malformed(format!("bad height `{value}`")))?),
            "F" => {
                let (n, d) = value
                    .split_once(':')
                    .and_then(|(n, d)| Some((n.parse::<u32>().ok()?, d.parse::<u32>().ok()?)))
                    .ok_or_else(|| malformed(format!("bad frame rate `{value}`")))?;
                rate = Some(FrameRate::new(n, d).map_err(|_| malformed(format!("bad frame rate `{value}`")))?);
            }
            "C" => {
                if !value.starts_with("420") {
                    return Err(VideoError::UnsupportedColorspace {
                        offset,
                        colorspace: value.to_string(),
                    });
                }
            }
            "X" => {
                if let Some(tag) = token.strip_prefix(PRIMARIES_TOKEN) {
                    primaries = ColorPrimaries::parse(tag)
                        .ok_or_else(|| malformed(format!("unknown colour primaries `{tag}`")))?;
                }
            }
            // interlacing, aspect ratio: accepted and ignored
            "I" | "A" => {}
            _ => return Err(malformed(format!("unknown header token `{token}`"))),
        }
        offset += token.len() + 1;
    }

    let width = width.ok_or_else(|| VideoError::MalformedHeader {
        offset: header_end,
        reason: "missing W token".into(),
    })?;
    let height = height.ok_or_else(|| VideoError::MalformedHeader {
        offset: header_end,
        reason: "missing H token".into(),
    })?;
    let rate = rate.ok_or_else(|| VideoError::MalformedHeader {
        offset: header_end,
        reason: "missing F token".into(),
    })?;
    check_geometry(width, height)?;

    let payload = frame_byte_len(width, height);
    let luma = width * height;
    let chroma = luma / 4;
    let mut pos = header_end + 1;
    let mut frames = Vec::new();
    while pos < bytes.len() {
        let index = frames.len();
        if !bytes[pos..].starts_with(FRAME_MARKER) {
            return Err(VideoError::BadFrameMarker { offset: pos, frame: index });
        }
        let line_end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| pos + p)
            .ok_or(VideoError::BadFrameMarker { offset: pos, frame: index })?;
        let next = bytes[pos + FRAME_MARKER.len()];
        if next != b'\n' && next != b' ' {
            return Err(VideoError::BadFrameMarker { offset: pos, frame: index });
        }
        let start = line_end + 1;
        let available = bytes.len() - start;
        if available < payload {
            return Err(VideoError::TruncatedFrame {
                offset: start,
                frame: index,
                expected: payload,
                found: available,
            });
        }
        let data = &bytes[start..start + payload];
        frames.push(Frame {
            width,
            height,
            y: data[..luma].to_vec(),
            u: data[luma..luma + chroma].to_vec(),
            v: data[luma + chroma..].to_vec(),
        });
        pos = start + payload;
    }

    VideoSequence::new(width, height, rate, primaries, frames)
}

fn parse_dim(s: &str) -> Option<usize> {
    s.parse::<usize>().ok().filter(|&v| v > 0)
}

pub fn read_y4m<R: Read>(mut reader: R) -> Result<VideoSequence> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    parse_y4m(&buf)
}

/// The header line `write_y4m` emits for `seq`, newline included.
pub fn y4m_header(seq: &VideoSequence) -> String {
    format!(
        "YUV4MPEG2 W{} H{} F{} Ip A1:1 C420jpeg {}{}\n",
        seq.width,
        seq.height,
        seq.frame_rate,
        PRIMARIES_TOKEN,
        seq.primaries.as_str()
    )
}

pub fn write_y4m<W: Write>(seq: &VideoSequence, out: &mut W) -> io::Result<()> {
    out.write_all(y4m_header(seq).as_bytes())?;
    for frame in &seq.frames {
        out.write_all(b"FRAME\n")?;
        frame.write_planes(out)?;
    }
    Ok(())
}

pub fn encode_y4m(seq: &VideoSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(y4m_header(seq).len() + seq.len() * (6 + frame_byte_len(seq.width, seq.height)));
    write_y4m(seq, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Parse headerless concatenated I420 frames; geometry and rate come from the caller.
pub fn parse_raw_yuv(bytes: &[u8], width: usize, height: usize, frame_rate: FrameRate) -> Result<VideoSequence> {
    check_geometry(width, height)?;
    let payload = frame_byte_len(width, height);
    let luma = width * height;
    let chroma = luma / 4;
    let mut frames = Vec::with_capacity(bytes.len() / payload);
    for (index, chunk) in bytes.chunks(payload).enumerate() {
        if chunk.len() != payload {
            return Err(VideoError::TruncatedFrame {
                offset: index * payload,
                frame: index,
                expected: payload,
                found: chunk.len(),
            });
        }
        frames.push(Frame {
            width,
            height,
            y: chunk[..luma].to_vec(),
            u: chunk[luma..luma + chroma].to_vec(),
            v: chunk[luma + chroma..].to_vec(),
        });
    }
    VideoSequence::new(width, height, frame_rate, ColorPrimaries::default(), frames)
}

pub fn write_raw_yuv<W: Write>(seq: &VideoSequence, out: &mut W) -> io::Result<()> {
    seq.frames.iter().try_for_each(|f| f.write_planes(out))
}

/// Number of frames kept when a clip at `rate` is limited to `seconds`.
pub fn frames_within(rate: FrameRate, seconds: f64) -> usize {
    let limit = (seconds * rate.num as f64 / rate.den as f64).floor();
    if limit.is_finite() && limit >= 0.0 {
        limit as usize
    } else {
        usize::MAX
    }
}

/// Keep the first `floor(seconds * fps)` frames.
///
/// # Panics
/// If `seconds` is not strictly positive.
pub fn trim_to_duration(seq: &VideoSequence, seconds: f64) -> VideoSequence {
    assert!(seconds > 0.0, "clip limit must be positive, got {seconds}");
    let keep = frames_within(seq.frame_rate, seconds).min(seq.len());
    VideoSequence {
        frames: seq.frames[..keep].to_vec(),
        ..seq.clone_header()
    }
}

impl VideoSequence {
    fn clone_header(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            frame_rate: self.frame_rate,
            primaries: self.primaries,
            frames: Vec::new(),
        }
    }

    /// Same geometry and timing with a different frame list.
    pub fn with_frames(&self, frames: Vec<Frame>) -> Result<Self> {
        let (width, height) = frames
            .first()
            .map(|f| (f.width, f.height))
            .unwrap_or((self.width, self.height));
        Self::new(width, height, self.frame_rate, self.primaries, frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorLayout {
    /// 1×H×W luma.
    YOnly,
    /// 3×H×W with chroma replicated to full resolution.
    Yuv444,
}

fn to_unit<T: Scalar>(s: u8) -> T {
    T::from_u8(s).unwrap() / T::from_u8(255).unwrap()
}

fn from_unit<T: Scalar>(v: T) -> u8 {
    let scaled = (v * T::from_u8(255).unwrap()).round();
    scaled.max(T::zero()).min(T::from_u8(255).unwrap()).to_u8().unwrap_or(0)
}

pub fn frame_to_tensor<T: Scalar>(frame: &Frame, layout: TensorLayout) -> Tensor<T> {
    let (w, h) = (frame.width, frame.height);
    match layout {
        TensorLayout::YOnly => {
            Tensor::from_float(Shape::new(1, h, w), frame.y.iter().map(|&s| to_unit(s)).collect())
                .expect("shape matches plane")
        }
        TensorLayout::Yuv444 => {
            let mut data: Vec<T> = frame.y.iter().map(|&s| to_unit(s)).collect();
            for plane in [&frame.u, &frame.v] {
                data.extend(
                    replicate_plane(plane, w / 2, h / 2, 2)
                        .into_iter()
                        .map(to_unit::<T>),
                );
            }
            Tensor::from_float(Shape::new(3, h, w), data).expect("shape matches planes")
        }
    }
}

/// Luma plane from a 1×H×W float tensor: round to nearest, clamp to [0, 255].
pub fn tensor_to_luma<T: Scalar>(tensor: &Tensor<T>) -> Result<Vec<u8>> {
    let shape = tensor.shape();
    if shape.channels != 1 {
        return Err(VideoError::TensorShape(shape));
    }
    let data = tensor.as_float().ok_or(VideoError::TensorShape(shape))?;
    Ok(data.iter().map(|&v| from_unit(v)).collect())
}

/// Inverse of [`frame_to_tensor`]. For `Yuv444` tensors the chroma is taken
/// from the top-left sample of every 2×2 block.
pub fn tensor_to_frame<T: Scalar>(tensor: &Tensor<T>) -> Result<Frame> {
    let shape = tensor.shape();
    let data = tensor.as_float().ok_or(VideoError::TensorShape(shape))?;
    let (w, h) = (shape.width, shape.height);
    check_geometry(w, h)?;
    match shape.channels {
        1 => {
            let y = data.iter().map(|&v| from_unit(v)).collect();
            let chroma = (w / 2) * (h / 2);
            Frame::new(w, h, y, vec![128; chroma], vec![128; chroma])
        }
        3 => {
            let plane = |c: usize| &data[c * w * h..(c + 1) * w * h];
            let y = plane(0).iter().map(|&v| from_unit(v)).collect();
            let decimate = |p: &[T]| -> Vec<u8> {
                (0..h / 2)
                    .flat_map(|cy| (0..w / 2).map(move |cx| (cy, cx)))
                    .map(|(cy, cx)| from_unit(p[2 * cy * w + 2 * cx]))
                    .collect()
            };
            Frame::new(w, h, y, decimate(plane(1)), decimate(plane(2)))
        }
        _ => Err(VideoError::TensorShape(shape)),
    }
}
