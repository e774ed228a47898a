use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rrm_core::io::{load_frames, load_model, save_frames, save_model};
use rrm_core::run::{
    calibrate_model, fit_points, load_error_model, run, save_error_model, sweep, write_report_files, FrameSource,
    RunConfig,
};
use rrm_core::synth::{self, SyntheticKind, SyntheticSpec};
use rrm_core::{CalibrationPoint, ErrorClass, ErrorModel, NetworkModel, Result, RrmError, Shape, Tensor};

#[derive(Parser)]
#[command(name = "rrm", version, about = "Sparse-delta video CNN inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process one video and write a JSON report (plus CSV alongside).
    Run(RunArgs),
    /// Repeat a run over several thresholds with the dense oracle enabled.
    Sweep(SweepArgs),
    /// Fit the error model from calibration videos or supplied pairs.
    Calibrate(CalibrateArgs),
    /// Write a model file.
    GenModel(GenModelArgs),
    /// Write a synthetic video as a directory of frame files.
    GenFrames(GenFramesArgs),
}

#[derive(Args)]
struct FrameArgs {
    /// Directory of frame files, read in lexicographic order.
    #[arg(long, conflicts_with = "synthetic")]
    frames: Option<PathBuf>,
    /// Synthetic video generator.
    #[arg(long, value_parser = parse_kind)]
    synthetic: Option<SyntheticKind>,
    /// Frame shape as CxHxW; defaults to the model input shape.
    #[arg(long, value_parser = parse_shape)]
    size: Option<Shape>,
    #[arg(long, default_value_t = 60)]
    num_frames: usize,
    /// Square step in pixels per frame, or random-walk amplitude.
    #[arg(long, default_value_t = 1.0)]
    motion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FrameArgs {
    fn source(&self, default_shape: Option<Shape>) -> Result<FrameSource> {
        match (&self.frames, self.synthetic) {
            (Some(dir), _) => Ok(FrameSource::Directory(dir.clone())),
            (None, Some(kind)) => {
                let shape = self.size.or(default_shape).ok_or_else(|| usage("--size is required"))?;
                Ok(FrameSource::Synthetic(SyntheticSpec {
                    kind,
                    shape,
                    frames: self.num_frames,
                    motion: self.motion,
                    seed: self.seed,
                }))
            }
            (None, None) => Err(usage("one of --frames or --synthetic is required")),
        }
    }
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    frames: FrameArgs,
    /// Error model file enabling the keyframe controller.
    #[arg(long)]
    error_model: Option<PathBuf>,
    /// Override the threshold stored in the error model (`inf` disables).
    #[arg(long, requires = "error_model")]
    error_threshold: Option<f64>,
    #[arg(long, default_value_t = 1)]
    chunks: usize,
    /// Summarise delta frames only.
    #[arg(long)]
    exclude_keyframes: bool,
    /// Output JSON path; the CSV goes next to it.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f32,
    /// Run dense inference side by side and report feature errors.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', required = true)]
    epsilons: Vec<f32>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, required_unless_present = "points")]
    model: Option<PathBuf>,
    /// Calibration video directory; repeat for several videos.
    #[arg(long = "video", conflicts_with_all = ["synthetic", "points"])]
    videos: Vec<PathBuf>,
    #[arg(long, value_parser = parse_kind, conflicts_with = "points")]
    synthetic: Option<SyntheticKind>,
    #[arg(long, value_parser = parse_shape)]
    size: Option<Shape>,
    #[arg(long, default_value_t = 60)]
    num_frames: usize,
    #[arg(long, default_value_t = 1.0)]
    motion: f64,
    /// Seed of the first synthetic video; later videos use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of synthetic calibration videos.
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// CSV of `accumulated_truncation,measured_error` pairs to fit directly.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f32,
    /// Keyframe trigger threshold stored in the model (`inf` disables).
    #[arg(long, default_value_t = f64::INFINITY)]
    error_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Demo,
    Random,
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long, value_enum, default_value = "demo")]
    kind: ModelKind,
    /// Input shape as CxHxW.
    #[arg(long, value_parser = parse_shape, default_value = "3x24x24")]
    input: Shape,
    /// Layer count for random models.
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenFramesArgs {
    #[arg(long, value_parser = parse_kind, default_value = "shifting-square")]
    synthetic: SyntheticKind,
    #[arg(long, value_parser = parse_shape, default_value = "3x24x24")]
    size: Shape,
    #[arg(long, default_value_t = 60)]
    num_frames: usize,
    #[arg(long, default_value_t = 1.0)]
    motion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> std::result::Result<SyntheticKind, String> {
    s.parse().map_err(|e: RrmError| e.to_string())
}

fn parse_shape(s: &str) -> std::result::Result<Shape, String> {
    let dims: Vec<usize> = s
        .split(['x', ','])
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format!("bad shape {s:?}: {e}"))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape::new(c, h, w)),
        _ => Err(format!("shape must be CxHxW with positive dims, got {s:?}")),
    }
}

fn usage(msg: &str) -> RrmError {
    RrmError::InvalidArgument(msg.into())
}

fn load_engine(args: &EngineArgs) -> Result<(NetworkModel, FrameSource, Vec<Tensor>, Option<ErrorModel>)> {
    let model = load_model(&args.model)?;
    let source = args.frames.source(Some(model.input_shape()))?;
    let frames = source.load()?;
    let em = args.error_model.as_deref().map(load_error_model).transpose()?;
    Ok((model, source, frames, em))
}

fn base_config(args: &EngineArgs) -> Result<RunConfig> {
    if args.chunks == 0 {
        return Err(usage("--chunks must be at least 1"));
    }
    if args.error_threshold.is_some_and(|t| t.is_nan() || t < 0.0) {
        return Err(usage("--error-threshold must be >= 0"));
    }
    Ok(RunConfig {
        error_threshold: args.error_threshold,
        chunks: args.chunks,
        include_keyframes: !args.exclude_keyframes,
        ..RunConfig::default()
    })
}

fn check_epsilon(eps: f32) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(usage(&format!("epsilon must be finite and >= 0, got {eps}")))
    }
}

fn fmt_speedup(s: Option<f64>) -> String {
    s.map_or_else(|| "unbounded".into(), |v| format!("{v:.4}"))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    check_epsilon(args.epsilon)?;
    let config = RunConfig {
        epsilon: args.epsilon,
        oracle: args.oracle,
        ..base_config(&args.engine)?
    };
    let (model, source, frames, em) = load_engine(&args.engine)?;
    let mut report = run(&model, &frames, &config, em.as_ref())?;
    report.frame_source = Some(source);
    let s = &report.summary;
    println!(
        "frames {}  keyframes {}  S dense {:.4}  S rrm {:.4}  speedup {}  mults {}",
        s.frames,
        s.keyframes.len(),
        s.dense_sparsity,
        s.rrm_sparsity,
        fmt_speedup(s.speedup),
        s.multiplications
    );
    if let Some(e) = s.max_feature_error {
        println!("max feature error {e:.3e}");
    }
    if let Some(path) = &args.engine.report {
        write_report_files(path, &report.to_json()?, &report.to_csv()?)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    for &e in &args.epsilons {
        check_epsilon(e)?;
    }
    let base = base_config(&args.engine)?;
    let (model, source, frames, em) = load_engine(&args.engine)?;
    let mut report = sweep(&model, &frames, &args.epsilons, &base, em.as_ref())?;
    report.frame_source = Some(source.clone());
    for r in &mut report.runs {
        r.frame_source = Some(source.clone());
    }
    println!("{:>10}  {:>8}  {:>8}  {:>10}  {:>12}", "epsilon", "S dense", "S rrm", "speedup", "final error");
    for r in &report.summary {
        println!(
            "{:>10}  {:>8.4}  {:>8.4}  {:>10}  {:>12.4e}",
            r.epsilon,
            r.dense_sparsity,
            r.rrm_sparsity,
            fmt_speedup(r.speedup),
            r.final_feature_error
        );
    }
    if let Some(path) = &args.engine.report {
        write_report_files(path, &report.to_json()?, &report.to_csv()?)?;
    }
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<CalibrationPoint>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize::<CalibrationPoint>()
        .map(|r| r.map_err(RrmError::from))
        .collect()
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    check_epsilon(args.epsilon)?;
    if args.error_threshold.is_nan() || args.error_threshold < 0.0 {
        return Err(usage("--error-threshold must be >= 0"));
    }
    let em = if let Some(points) = &args.points {
        fit_points(&read_points(points)?, args.error_threshold)?
    } else {
        let model = load_model(args.model.as_ref().ok_or_else(|| usage("--model is required"))?)?;
        let videos: Vec<Vec<Tensor>> = if !args.videos.is_empty() {
            args.videos.iter().map(load_frames).collect::<Result<_>>()?
        } else if let Some(kind) = args.synthetic {
            let shape = args.size.unwrap_or(model.input_shape());
            (0..args.count as u64)
                .map(|i| {
                    SyntheticSpec {
                        kind,
                        shape,
                        frames: args.num_frames,
                        motion: args.motion,
                        seed: args.seed + i,
                    }
                    .generate()
                })
                .collect::<Result<_>>()?
        } else {
            return Err(usage("one of --video, --synthetic or --points is required"));
        };
        calibrate_model(&model, &videos, args.epsilon, args.error_threshold)?
    };
    println!(
        "{} points, coefficients {:?}, residual rms {:.3e}",
        em.calibration_points.len(),
        em.coefficients,
        em.residual_rms()
    );
    save_error_model(&em, &args.out)
}

fn cmd_gen_model(args: GenModelArgs) -> Result<()> {
    let model = match args.kind {
        ModelKind::Demo => synth::demo_model(args.input, args.seed)?,
        ModelKind::Random => synth::random_model(&mut ChaCha8Rng::seed_from_u64(args.seed), args.input, args.depth)?,
    };
    save_model(&model, &args.out)?;
    let names: Vec<&str> = model.layers().iter().map(|l| l.name()).collect();
    println!("{} -> {}: {}", model.input_shape(), model.output_shape(), names.join(", "));
    Ok(())
}

fn cmd_gen_frames(args: GenFramesArgs) -> Result<()> {
    let spec = SyntheticSpec {
        kind: args.synthetic,
        shape: args.size,
        frames: args.num_frames,
        motion: args.motion,
        seed: args.seed,
    };
    save_frames(&spec.generate()?, &args.out)?;
    println!("{} frames of {} written to {}", spec.frames, spec.shape, args.out.display());
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::DataFormat => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::GenModel(a) => cmd_gen_model(a),
        Command::GenFrames(a) => cmd_gen_frames(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
