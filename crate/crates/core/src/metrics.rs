//! Objective quality metrics: PSNR and SSIM over 8-bit 4:2:0 frames, plus
//! per-run aggregation with execution-time statistics.
//!
//! PSNR over all planes pools the squared error of every Y, U and V sample.
//! SSIM is evaluated only at window positions that lie fully inside the
//! plane; the all-plane score weights Y, U and V by sample count (4:1:1).
//! A zero-error frame has no finite PSNR and is reported as
//! [`Psnr::Identical`] rather than a capped value.

use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::video_io::Frame;

pub const PEAK: f64 = 255.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{plane} plane is {width}x{height}, smaller than the {window}x{window} SSIM window")]
    PlaneTooSmall {
        plane: &'static str,
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("cannot aggregate an empty frame list")]
    Empty,
    #[error("sequences hold {0} and {1} frames")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlaneMode {
    AllPlanes,
    YOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Zero mean squared error.
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }

    pub fn is_identical(self) -> bool {
        self == Psnr::Identical
    }

    pub fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Identical
        } else {
            Psnr::Db(10.0 * (PEAK * PEAK / mse).log10())
        }
    }
}

fn check_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    Ok(())
}

fn sse(a: &[u8], b: &[u8]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum()
}

pub fn psnr_frame(reference: &Frame, test: &Frame, mode: PlaneMode) -> Result<Psnr> {
    check_dims(reference, test)?;
    let (err, n) = match mode {
        PlaneMode::YOnly => (sse(reference.y(), test.y()), reference.y().len()),
        PlaneMode::AllPlanes => (
            sse(reference.y(), test.y()) + sse(reference.u(), test.u()) + sse(reference.v(), test.v()),
            reference.byte_len(),
        ),
    };
    Ok(Psnr::from_mse(err as f64 / n as f64))
}

/// SSIM constants and window.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    kernel: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self::gaussian(11, 1.5)
    }
}

impl SsimParams {
    pub fn gaussian(size: usize, sigma: f64) -> Self {
        assert!(size % 2 == 1 && sigma > 0.0, "window must be odd-sized with positive sigma");
        let half = (size / 2) as f64;
        let raw: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        Self {
            kernel: raw.iter().map(|v| v / sum).collect(),
            k1: 0.01,
            k2: 0.03,
            dynamic_range: PEAK,
        }
    }

    pub fn window_size(&self) -> usize {
        self.kernel.len()
    }

    pub fn window(&self) -> Vec<f64> {
        self.kernel
            .iter()
            .flat_map(|a| self.kernel.iter().map(move |b| a * b))
            .collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Valid-mode separable filtering of one plane for the five SSIM moments.
fn plane_ssim(a: &[u8], b: &[u8], width: usize, height: usize, params: &SsimParams) -> f64 {
    let k = &params.kernel;
    let n = k.len();
    let (ow, oh) = (width - n + 1, height - n + 1);
    // horizontal pass: [mx, my, mxx, myy, mxy] for every (row, output column)
    let mut rows = vec![[0.0f64; 5]; height * ow];
    for y in 0..height {
        let ra = &a[y * width..(y + 1) * width];
        let rb = &b[y * width..(y + 1) * width];
        for x in 0..ow {
            let mut m = [0.0f64; 5];
            for (i, &w) in k.iter().enumerate() {
                let p = ra[x + i] as f64;
                let q = rb[x + i] as f64;
                m[0] += w * p;
                m[1] += w * q;
                m[2] += w * (p * p);
                m[3] += w * (q * q);
                m[4] += w * (p * q);
            }
            rows[y * ow + x] = m;
        }
    }
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let mut m = [0.0f64; 5];
            for (i, &w) in k.iter().enumerate() {
                let r = &rows[(y + i) * ow + x];
                for j in 0..5 {
                    m[j] += w * r[j];
                }
            }
            let [mx, my, mxx, myy, mxy] = m;
            let sxx = mxx - mx * mx;
            let syy = myy - my * my;
            let sxy = mxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
            let den = (mx * mx + my * my + c1) * (sxx + syy + c2);
            total += num / den;
        }
    }
    total / (ow * oh) as f64
}

pub fn ssim_frame(reference: &Frame, test: &Frame, params: &SsimParams, mode: PlaneMode) -> Result<f64> {
    check_dims(reference, test)?;
    let n = params.window_size();
    let (w, h) = (reference.width(), reference.height());
    let too_small = |plane, width, height| MetricsError::PlaneTooSmall {
        plane,
        width,
        height,
        window: n,
    };
    if w < n || h < n {
        return Err(too_small("Y", w, h));
    }
    let y = plane_ssim(reference.y(), test.y(), w, h, params);
    match mode {
        PlaneMode::YOnly => Ok(y),
        PlaneMode::AllPlanes => {
            let (cw, ch) = (reference.chroma_width(), reference.chroma_height());
            if cw < n || ch < n {
                return Err(too_small("chroma", cw, ch));
            }
            let u = plane_ssim(reference.u(), test.u(), cw, ch, params);
            let v = plane_ssim(reference.v(), test.v(), cw, ch, params);
            Ok((4.0 * y + u + v) / 6.0)
        }
    }
}

/// Per-frame measurements as written to the CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub psnr: Psnr,
    pub ypsnr: Psnr,
    pub ssim_all: f64,
    pub yssim: f64,
    pub forward: Option<Duration>,
}

pub fn compare_frames(reference: &Frame, test: &Frame, params: &SsimParams) -> Result<FrameMetrics> {
    Ok(FrameMetrics {
        psnr: psnr_frame(reference, test, PlaneMode::AllPlanes)?,
        ypsnr: psnr_frame(reference, test, PlaneMode::YOnly)?,
        ssim_all: ssim_frame(reference, test, params, PlaneMode::AllPlanes)?,
        yssim: ssim_frame(reference, test, params, PlaneMode::YOnly)?,
        forward: None,
    })
}

/// Compare frame lists pairwise; frames are evaluated in parallel and
/// returned in order.
pub fn compare_sequences(reference: &[Frame], test: &[Frame], params: &SsimParams) -> Result<Vec<FrameMetrics>> {
    if reference.len() != test.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), test.len()));
    }
    reference
        .par_iter()
        .zip(test)
        .map(|(r, t)| compare_frames(r, t, params))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub ms_per_frame: f64,
    pub fps: f64,
    /// Frames contributing to the mean (warm-up excluded).
    pub timed_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frames: Vec<FrameMetrics>,
    pub psnr_min: Option<f64>,
    pub psnr_max: Option<f64>,
    pub psnr_avg: Option<f64>,
    pub ypsnr_avg: Option<f64>,
    pub ssim_all: f64,
    pub yssim: f64,
    pub identical_frame_count: usize,
    pub total_frames: usize,
    pub timing: Option<TimingStats>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregate per-frame metrics.
///
/// Identical frames are counted and left out of the PSNR statistics. Timing
/// statistics use the frames after the first `warmup` (all frames if that
/// leaves none) and are present only when every frame carries a timing.
pub fn aggregate(frames: Vec<FrameMetrics>, warmup: usize) -> Result<MetricsReport> {
    if frames.is_empty() {
        return Err(MetricsError::Empty);
    }
    let finite: Vec<f64> = frames.iter().filter_map(|f| f.psnr.db()).collect();
    let psnr_min = finite.iter().copied().reduce(f64::min);
    let psnr_max = finite.iter().copied().reduce(f64::max);
    // clamp guards the ordering invariant against summation rounding
    let psnr_avg = mean(finite.iter().copied()).map(|a| a.clamp(psnr_min.unwrap(), psnr_max.unwrap()));
    let ypsnr_avg = mean(frames.iter().filter_map(|f| f.ypsnr.db()));
    let timing = frames.iter().map(|f| f.forward).collect::<Option<Vec<_>>>().map(|t| {
        let timed = if warmup < t.len() { &t[warmup..] } else { &t[..] };
        let ms_per_frame = timed.iter().map(|d| d.as_secs_f64() * 1e3).sum::<f64>() / timed.len() as f64;
        TimingStats {
            ms_per_frame,
            fps: 1e3 / ms_per_frame,
            timed_frames: timed.len(),
        }
    });
    Ok(MetricsReport {
        psnr_min,
        psnr_max,
        psnr_avg,
        ypsnr_avg,
        ssim_all: mean(frames.iter().map(|f| f.ssim_all)).unwrap(),
        yssim: mean(frames.iter().map(|f| f.yssim)).unwrap(),
        identical_frame_count: frames.len() - finite.len(),
        total_frames: frames.len(),
        timing,
        frames,
    })
}
