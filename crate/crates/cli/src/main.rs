//! `movidnn`: run enhancement models over clips, build and quantize models,
//! compare videos, and host subjective tests.

use std::fs::File;
use std::io::BufWriter;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use movidnn_core::inference::{Backend, ModelGraph};
use movidnn_core::models::{build_architecture, calibrate, container_size, quantize_graph, ArchConfig, ArchKind};
use movidnn_core::pipeline::{self, DnnTestConfig, DEFAULT_LIMIT_SECONDS, DEFAULT_WARMUP};
use movidnn_subjective::{http, Catalog, SessionStore};

/// Exit status for runtime failures; usage errors exit with 1.
const RUNTIME_FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "movidnn", version, about = "Benchmark DNN video enhancement models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a model over a clip and report quality and speed metrics
    DnnTest(DnnTestArgs),
    /// Write a reference architecture with seeded weights
    BuildModel(BuildModelArgs),
    /// Convert a float model to int8 using calibration frames
    Quantize(QuantizeArgs),
    /// Compare two videos frame by frame
    Metrics(MetricsArgs),
    /// Host the subjective test service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DnnTestArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    video: PathBuf,
    /// Ground truth to score against; required for upscaling models
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "single", value_parser = parse_backend)]
    backend: Backend,
    #[arg(long, default_value_t = DEFAULT_LIMIT_SECONDS)]
    limit_seconds: f64,
    /// Leading frames left out of the timing average
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write each output frame as raw I420 under OUT_DIR/frames
    #[arg(long)]
    dump_frames: bool,
}

#[derive(Debug, Args)]
struct BuildModelArgs {
    /// espcn, evsrnet, dncnn or identity
    #[arg(long)]
    arch: String,
    #[arg(long)]
    scale: Option<usize>,
    /// Residual blocks (evsrnet)
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Y4M clip whose frames drive calibration
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = 10)]
    max_frames: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory of original clips (`<video>.y4m`)
    #[arg(long)]
    originals: PathBuf,
    /// Directory of model outputs (`<video>__<model>.y4m`)
    #[arg(long)]
    enhanced: PathBuf,
    /// Where session CSVs and the MOS report are written
    #[arg(long)]
    results: PathBuf,
    /// Seed for playlists of sessions created without one
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(RUNTIME_FAILURE)
        }
    }
}

/// The error chain, leaving out causes whose text a parent already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::DnnTest(a) => dnn_test(a),
        Command::BuildModel(a) => build_model(a),
        Command::Quantize(a) => quantize(a),
        Command::Metrics(a) => metrics(a),
        Command::Serve(a) => serve(a),
    }
}

fn dnn_test(a: DnnTestArgs) -> Result<()> {
    let cfg = DnnTestConfig {
        reference: a.reference,
        backend: a.backend,
        limit_seconds: a.limit_seconds,
        warmup: a.warmup,
        dump_frames: a.dump_frames,
        ..DnnTestConfig::new(a.model, a.video, a.out_dir)
    };
    let res = pipeline::run_dnn_test(&cfg)?;
    let r = &res.report;
    println!("output  {}", res.output_path.display());
    println!("metrics {}", res.csv_path.display());
    println!("frames  {} ({} identical)", r.total_frames, r.identical_frame_count);
    if let Some(t) = r.timing {
        println!("speed   {:.3} ms/frame, {:.2} fps", t.ms_per_frame, t.fps);
    }
    match r.psnr_avg {
        Some(p) => println!("psnr    {p:.4} dB avg, ssim {:.4}", r.ssim_all),
        None => println!("psnr    all frames identical, ssim {:.4}", r.ssim_all),
    }
    Ok(())
}

fn build_model(a: BuildModelArgs) -> Result<()> {
    let graph: ModelGraph<f32> = if a.arch.eq_ignore_ascii_case("identity") {
        ModelGraph::identity("identity")
    } else {
        let kind: ArchKind = a.arch.parse().map_err(anyhow::Error::msg)?;
        let default_scale = if kind == ArchKind::Dncnn { 1 } else { 2 };
        let mut cfg = ArchConfig::for_kind(kind, a.scale.unwrap_or(default_scale)).with_seed(a.seed);
        if let Some(b) = a.blocks {
            if kind != ArchKind::Evsrnet {
                bail!("--blocks only applies to evsrnet");
            }
            cfg.blocks = b;
        }
        build_architecture(&cfg)?
    };
    pipeline::write_model(&a.out, &graph)?;
    println!(
        "{}: {} layers, {} bytes",
        a.out.display(),
        graph.layers().len(),
        container_size(&graph)
    );
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let graph = pipeline::read_model(&a.model)?;
    let calib = pipeline::read_video(&a.calib)?;
    let stats = calibrate(&graph, &calib, a.max_frames)?;
    let quant = quantize_graph(&graph, &stats)?;
    pipeline::write_model(&a.out, &quant)?;
    println!(
        "{}: int8, {} calibration frames, {} -> {} bytes",
        a.out.display(),
        stats.samples,
        container_size(&graph),
        container_size(&quant)
    );
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let reference = pipeline::read_video(&a.reference)?;
    let test = pipeline::read_video(&a.test)?;
    let report = pipeline::compare_videos(&reference, &test)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let name = a.test.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    pipeline::write_report_csv(BufWriter::new(file), &name, "", "", &report)?;
    match report.psnr_avg {
        Some(p) => println!("{} frames, psnr {p:.4} dB avg, ssim {:.4}", report.total_frames, report.ssim_all),
        None => println!("{} frames, all identical", report.total_frames),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let catalog = Catalog::scan(&a.originals, &a.enhanced)?;
    info!(
        "{} videos, conditions: {}",
        catalog.videos().len(),
        catalog.conditions().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
    );
    let store = Arc::new(SessionStore::open(catalog, &a.results, a.seed)?);
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime
        .block_on(http::serve(store, SocketAddr::new(a.host, a.port)))
        .context("http server")
}
