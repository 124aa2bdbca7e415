//! End-to-end DNN test: load a model, run it over a clip frame by frame in
//! display order, write the enhanced clip, and report metrics against a
//! reference as CSV.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{debug, info};
use thiserror::Error;

use crate::inference::{self, run_model_with, Backend, InferenceError, ModelGraph};
use crate::metrics::{self, aggregate, FrameMetrics, MetricsError, MetricsReport, Psnr, SsimParams};
use crate::video_io::{self, frame_to_tensor, tensor_to_luma, trim_to_duration, TensorLayout, VideoError, VideoSequence};

pub const SUMMARY_HEADER: [&str; 13] = [
    "video",
    "model",
    "backend",
    "total_frames",
    "identical_frames",
    "ms_per_frame",
    "fps",
    "psnr_min",
    "psnr_max",
    "psnr_avg",
    "ypsnr_avg",
    "ssim_all",
    "yssim",
];

pub const FRAME_HEADER: [&str; 6] = ["frame", "psnr", "ypsnr", "ssim_all", "yssim", "forward_ms"];

pub const DEFAULT_LIMIT_SECONDS: f64 = 10.0;
pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Video {
        path: PathBuf,
        #[source]
        source: VideoError,
    },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: InferenceError,
    },
    #[error("frame {frame}: {source}")]
    Inference {
        frame: usize,
        #[source]
        source: InferenceError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("model `{model}` upscales by {factor}; a reference video is required")]
    ReferenceRequired { model: String, factor: usize },
    #[error("reference is {ref_w}x{ref_h} but the output is {out_w}x{out_h}")]
    DimensionMismatch {
        ref_w: usize,
        ref_h: usize,
        out_w: usize,
        out_h: usize,
    },
    #[error("reference holds {reference} frames, {needed} are needed")]
    ReferenceTooShort { reference: usize, needed: usize },
    #[error("model is incompatible with luma input: {0}")]
    ModelIncompatible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input video has no frames")]
    EmptyVideo,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed metrics csv: {0}")]
    CsvFormat(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DnnTestConfig {
    pub model: PathBuf,
    pub video: PathBuf,
    pub reference: Option<PathBuf>,
    pub backend: Backend,
    pub out_dir: PathBuf,
    pub limit_seconds: f64,
    /// Leading frames excluded from timing (still processed and written).
    pub warmup: usize,
    /// Also write every output frame as raw I420 under `out_dir/frames`.
    pub dump_frames: bool,
}

impl DnnTestConfig {
    pub fn new(model: impl Into<PathBuf>, video: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            video: video.into(),
            reference: None,
            backend: Backend::Single,
            out_dir: out_dir.into(),
            limit_seconds: DEFAULT_LIMIT_SECONDS,
            warmup: DEFAULT_WARMUP,
            dump_frames: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.limit_seconds > 0.0 && self.limit_seconds.is_finite()) {
            return Err(PipelineError::Config(format!(
                "clip limit must be positive, got {}",
                self.limit_seconds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DnnTestResult {
    pub video_name: String,
    pub model_name: String,
    pub backend: Backend,
    pub output_path: PathBuf,
    pub csv_path: PathBuf,
    pub report: MetricsReport,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_video(path: &Path) -> Result<VideoSequence> {
    let bytes = read_file(path)?;
    video_io::parse_y4m(&bytes).map_err(|source| PipelineError::Video {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_video(path: &Path, seq: &VideoSequence) -> Result<()> {
    let io_err = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    video_io::write_y4m(seq, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn read_model(path: &Path) -> Result<ModelGraph<f32>> {
    let bytes = read_file(path)?;
    inference::load_model(&bytes).map_err(|source| PipelineError::Model {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_model(path: &Path, graph: &ModelGraph<f32>) -> Result<()> {
    fs::write(path, inference::save_model(graph)).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into())
}

/// Output video and CSV paths for a run: `<stem>__<model>.y4m` / `.csv`.
pub fn output_paths(out_dir: &Path, video: &Path, model: &str) -> (PathBuf, PathBuf) {
    let base = format!("{}__{}", file_stem(video), model);
    (out_dir.join(format!("{base}.y4m")), out_dir.join(format!("{base}.csv")))
}

/// Run a luma model over every frame in order. Returns the enhanced
/// sequence and the forward time of each frame.
pub fn enhance_sequence(
    graph: &ModelGraph<f32>,
    input: &VideoSequence,
    backend: Backend,
    mut on_frame: impl FnMut(usize, &video_io::Frame) -> Result<()>,
) -> Result<(VideoSequence, Vec<Duration>)> {
    let spec = graph.input_spec();
    if spec.channels != 1 || graph.output_channels() != 1 {
        return Err(PipelineError::ModelIncompatible(format!(
            "`{}` maps {} channel(s) to {}, expected 1 to 1",
            graph.name(),
            spec.channels,
            graph.output_channels()
        )));
    }
    let factor = graph.upscale();
    let (ow, oh) = (input.width() * factor, input.height() * factor);
    let mut frames = Vec::with_capacity(input.len());
    let mut timings = Vec::with_capacity(input.len());
    for (index, frame) in input.frames().iter().enumerate() {
        let tensor = frame_to_tensor::<f32>(frame, TensorLayout::YOnly);
        let result = run_model_with(graph, &tensor, backend).map_err(|source| PipelineError::Inference { frame: index, source })?;
        let luma = tensor_to_luma(&result.output).map_err(|source| PipelineError::Video {
            path: PathBuf::new(),
            source,
        })?;
        let out = frame.with_luma(ow, oh, luma, factor).map_err(|source| PipelineError::Video {
            path: PathBuf::new(),
            source,
        })?;
        on_frame(index, &out)?;
        debug!("frame {index}: {:?}", result.forward_time);
        frames.push(out);
        timings.push(result.forward_time);
    }
    let seq = VideoSequence::new(ow, oh, input.frame_rate(), input.primaries(), frames).map_err(|source| {
        PipelineError::Video {
            path: PathBuf::new(),
            source,
        }
    })?;
    Ok((seq, timings))
}

pub fn run_dnn_test(cfg: &DnnTestConfig) -> Result<DnnTestResult> {
    cfg.validate()?;
    let graph = read_model(&cfg.model)?;
    let input = trim_to_duration(&read_video(&cfg.video)?, cfg.limit_seconds);
    if input.is_empty() {
        return Err(PipelineError::EmptyVideo);
    }
    let factor = graph.upscale();
    let reference = match &cfg.reference {
        Some(path) => trim_to_duration(&read_video(path)?, cfg.limit_seconds),
        None if factor == 1 => input.clone(),
        None => {
            return Err(PipelineError::ReferenceRequired {
                model: graph.name().to_string(),
                factor,
            })
        }
    };
    let (ow, oh) = (input.width() * factor, input.height() * factor);
    if reference.width() != ow || reference.height() != oh {
        return Err(PipelineError::DimensionMismatch {
            ref_w: reference.width(),
            ref_h: reference.height(),
            out_w: ow,
            out_h: oh,
        });
    }
    if reference.len() < input.len() {
        return Err(PipelineError::ReferenceTooShort {
            reference: reference.len(),
            needed: input.len(),
        });
    }

    fs::create_dir_all(&cfg.out_dir).map_err(|source| PipelineError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let frames_dir = cfg.out_dir.join("frames");
    if cfg.dump_frames {
        fs::create_dir_all(&frames_dir).map_err(|source| PipelineError::Io {
            path: frames_dir.clone(),
            source,
        })?;
    }
    let stem = file_stem(&cfg.video);
    info!(
        "{}: {} frames through `{}` ({} backend)",
        cfg.video.display(),
        input.len(),
        graph.name(),
        cfg.backend.as_str()
    );
    let (output, timings) = enhance_sequence(&graph, &input, cfg.backend, |index, frame| {
        if !cfg.dump_frames {
            return Ok(());
        }
        let path = frames_dir.join(format!("{stem}_{index:05}.yuv"));
        let io_err = |source| PipelineError::Io {
            path: path.clone(),
            source,
        };
        let mut out = BufWriter::new(File::create(&path).map_err(io_err)?);
        frame.write_planes(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    })?;

    let (output_path, csv_path) = output_paths(&cfg.out_dir, &cfg.video, graph.name());
    write_video(&output_path, &output)?;

    let mut per_frame = metrics::compare_sequences(&reference.frames()[..output.len()], output.frames(), &SsimParams::default())?;
    for (m, t) in per_frame.iter_mut().zip(&timings) {
        m.forward = Some(*t);
    }
    let report = aggregate(per_frame, cfg.warmup)?;
    let result = DnnTestResult {
        video_name: cfg
            .video
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        model_name: graph.name().to_string(),
        backend: cfg.backend,
        output_path,
        csv_path,
        report,
    };
    write_metrics_csv(&result, &result.csv_path)?;
    Ok(result)
}

/// Metrics between two videos of equal geometry, without timing.
pub fn compare_videos(reference: &VideoSequence, test: &VideoSequence) -> Result<MetricsReport> {
    if reference.width() != test.width() || reference.height() != test.height() {
        return Err(PipelineError::DimensionMismatch {
            ref_w: reference.width(),
            ref_h: reference.height(),
            out_w: test.width(),
            out_h: test.height(),
        });
    }
    let n = reference.len().min(test.len());
    let per_frame = metrics::compare_sequences(&reference.frames()[..n], &test.frames()[..n], &SsimParams::default())?;
    Ok(aggregate(per_frame, 0)?)
}

fn fmt4(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => String::new(),
    }
}

/// Write the summary row followed by the per-frame section.
pub fn write_report_csv<W: Write>(out: W, video: &str, model: &str, backend: &str, report: &MetricsReport) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    let timing = report.timing;
    w.write_record([
        video.to_string(),
        model.to_string(),
        backend.to_string(),
        report.total_frames.to_string(),
        report.identical_frame_count.to_string(),
        fmt4(timing.map(|t| t.ms_per_frame)),
        fmt4(timing.map(|t| t.fps)),
        fmt4(report.psnr_min),
        fmt4(report.psnr_max),
        fmt4(report.psnr_avg),
        fmt4(report.ypsnr_avg),
        fmt4(Some(report.ssim_all)),
        fmt4(Some(report.yssim)),
    ])?;
    w.write_record(FRAME_HEADER)?;
    for (i, f) in report.frames.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt4(f.psnr.db()),
            fmt4(f.ypsnr.db()),
            fmt4(Some(f.ssim_all)),
            fmt4(Some(f.yssim)),
            fmt4(f.forward.map(|d| d.as_secs_f64() * 1e3)),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::Csv(e.into()))?;
    Ok(())
}

pub fn write_metrics_csv(result: &DnnTestResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_report_csv(
        BufWriter::new(file),
        &result.video_name,
        &result.model_name,
        result.backend.as_str(),
        &result.report,
    )
}

/// Summary row of a metrics CSV as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSummary {
    pub video: String,
    pub model: String,
    pub backend: String,
    pub total_frames: usize,
    pub identical_frames: usize,
    pub ms_per_frame: Option<f64>,
    pub fps: Option<f64>,
    pub psnr_min: Option<f64>,
    pub psnr_max: Option<f64>,
    pub psnr_avg: Option<f64>,
    pub ypsnr_avg: Option<f64>,
    pub ssim_all: f64,
    pub yssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvFrame {
    pub frame: usize,
    pub psnr: Option<f64>,
    pub ypsnr: Option<f64>,
    pub ssim_all: f64,
    pub yssim: f64,
    pub forward_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsCsv {
    pub summary: CsvSummary,
    pub frames: Vec<CsvFrame>,
}

fn cell_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| PipelineError::CsvFormat(format!("not a number: `{s}`")))
}

fn cell(s: &str) -> Result<f64> {
    cell_opt(s)?.ok_or_else(|| PipelineError::CsvFormat("missing value".into()))
}

fn cell_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| PipelineError::CsvFormat(format!("not a count: `{s}`")))
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<MetricsCsv> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    let header_ok = |i: usize, expected: &[&str]| rows.get(i).is_some_and(|row| row.iter().eq(expected.iter().copied()));
    if !header_ok(0, &SUMMARY_HEADER) || !header_ok(2, &FRAME_HEADER) {
        return Err(PipelineError::CsvFormat("unexpected header".into()));
    }
    let s = &rows[1];
    if s.len() != SUMMARY_HEADER.len() {
        return Err(PipelineError::CsvFormat("summary row has the wrong width".into()));
    }
    let summary = CsvSummary {
        video: s[0].to_string(),
        model: s[1].to_string(),
        backend: s[2].to_string(),
        total_frames: cell_usize(&s[3])?,
        identical_frames: cell_usize(&s[4])?,
        ms_per_frame: cell_opt(&s[5])?,
        fps: cell_opt(&s[6])?,
        psnr_min: cell_opt(&s[7])?,
        psnr_max: cell_opt(&s[8])?,
        psnr_avg: cell_opt(&s[9])?,
        ypsnr_avg: cell_opt(&s[10])?,
        ssim_all: cell(&s[11])?,
        yssim: cell(&s[12])?,
    };
    let frames = rows[3..]
        .iter()
        .map(|row| {
            if row.len() != FRAME_HEADER.len() {
                return Err(PipelineError::CsvFormat("frame row has the wrong width".into()));
            }
            Ok(CsvFrame {
                frame: cell_usize(&row[0])?,
                psnr: cell_opt(&row[1])?,
                ypsnr: cell_opt(&row[2])?,
                ssim_all: cell(&row[3])?,
                yssim: cell(&row[4])?,
                forward_ms: cell_opt(&row[5])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsCsv { summary, frames })
}

impl MetricsCsv {
    /// Re-aggregate the per-frame rows, mirroring [`aggregate`].
    pub fn reaggregate(&self, warmup: usize) -> Result<MetricsReport> {
        let frames = self
            .frames
            .iter()
            .map(|f| FrameMetrics {
                psnr: f.psnr.map(Psnr::Db).unwrap_or(Psnr::Identical),
                ypsnr: f.ypsnr.map(Psnr::Db).unwrap_or(Psnr::Identical),
                ssim_all: f.ssim_all,
                yssim: f.yssim,
                forward: f.forward_ms.map(|ms| Duration::from_secs_f64(ms / 1e3)),
            })
            .collect();
        Ok(aggregate(frames, warmup)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::TimingStats;

    fn report() -> MetricsReport {
        let f = |psnr, ms| FrameMetrics {
            psnr,
            ypsnr: psnr,
            ssim_all: 0.91234567,
            yssim: 0.9,
            forward: Some(Duration::from_micros(ms)),
        };
        aggregate(vec![f(Psnr::Db(31.123456), 1500), f(Psnr::Identical, 2500)], 0).unwrap()
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_report_csv(&mut buf, "in.y4m", "espcn", "single", &report()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[0],
            "video,model,backend,total_frames,identical_frames,ms_per_frame,fps,psnr_min,psnr_max,psnr_avg,ypsnr_avg,ssim_all,yssim"
        );
        assert_eq!(lines[1], "in.y4m,espcn,single,2,1,2.0000,500.0000,31.1235,31.1235,31.1235,31.1235,0.9123,0.9000");
        assert_eq!(lines[2], "frame,psnr,ypsnr,ssim_all,yssim,forward_ms");
        assert_eq!(lines[3], "0,31.1235,31.1235,0.9123,0.9000,1.5000");
        assert_eq!(lines[4], "1,,,0.9123,0.9000,2.5000");
        assert!(!text.contains("inf"));
    }

    #[test]
    fn csv_parse_back() {
        let r = report();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, "v", "m", "parallel", &r).unwrap();
        let parsed = read_metrics_csv(&buf[..]).unwrap();
        assert_eq!(parsed.summary.identical_frames, 1);
        assert_eq!(parsed.summary.total_frames, 2);
        assert!((parsed.summary.ssim_all - r.ssim_all).abs() < 1e-4);
        let again = parsed.reaggregate(0).unwrap();
        assert!((again.psnr_avg.unwrap() - r.psnr_avg.unwrap()).abs() < 1e-4);
        let TimingStats { ms_per_frame, .. } = again.timing.unwrap();
        assert!((ms_per_frame - 2.0).abs() < 1e-4);
    }

    #[test]
    fn csv_rejects_foreign_files() {
        assert!(read_metrics_csv(&b"a,b\n1,2\n"[..]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = DnnTestConfig::new("m", "v", "o");
        assert!(cfg.validate().is_ok());
        cfg.limit_seconds = 0.0;
        assert!(cfg.validate().is_err());
    }
}
