//! `roomlayout`: synthetic data generation, reconstruction, evaluation and
//! rendering behind one subcommand-style binary.
//!
//! Exit codes: 0 ok, 2 usage or configuration error, 3 I/O or parse error,
//! 4 structured pipeline or evaluation failure.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use room_layout::layout::{export_mesh, format_pgm, format_ppm, parse_pgm, render_layout2d, LayoutError};
use room_layout::measurements::{load_sequence, parse_measurements, parse_poses, save_sequence, MeasurementError};
use room_layout::metrics::{evaluate_planes, format_plane_report, pixel_error_2d, MetricsError};
use room_layout::pipeline::reconstruct;
use room_layout::synth::{generate_sequence, ground_truth_layout, SynthError};
use serde_json::json;
use thiserror::Error;

pub use config::{resolve, CliConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Io(_) => 3,
            Self::Failure(_) => 4,
        }
    }
}

impl From<MeasurementError> for CliError {
    fn from(e: MeasurementError) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<LayoutError> for CliError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::EmptyLayout => Self::Failure(e.to_string()),
            other => Self::Io(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::Usage(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "roomlayout", version, about = "Room layout reconstruction from per-frame plane detections")]
#[command(after_long_help = config::keys_help())]
pub struct Cli {
    /// TOML configuration file (sections intrinsics, room, trajectory, noise, pipeline).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set pipeline.voting.e_min=inf`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for noise, trajectory and clustering.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write into a non-empty run directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic room, trajectory and noisy detections.
    Synth,
    /// Reconstruct the room layout from detections and poses.
    Reconstruct(ReconstructArgs),
    /// Compare predicted and ground-truth plane detections.
    EvalPlanes(EvalPlanesArgs),
    /// Pixel error between two label images after optimal relabeling.
    #[command(name = "eval-2d")]
    Eval2d(Eval2dArgs),
    /// Render the detections of one frame as a label image.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Detections, one JSON object per line.
    #[arg(long)]
    pub measurements: PathBuf,
    /// Camera-to-world poses: `frame tx ty tz qx qy qz qw` per line.
    #[arg(long)]
    pub poses: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalPlanesArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Minimum box IoU of a match.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Sample every n-th pixel of a box for the location score.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct Eval2dArgs {
    /// Predicted label image (plain PGM).
    pub pred: PathBuf,
    /// Ground-truth label image (plain PGM).
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    #[arg(long)]
    pub frame: u64,
    /// Optional pose file; when given, the frame must have a pose.
    #[arg(long)]
    pub poses: Option<PathBuf>,
}

/// Creates the run directory; refuses a non-empty one unless `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!("{} is not empty; pass --force to overwrite", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn header(cmd: &str, cfg: &CliConfig) -> Vec<String> {
    let mut h = vec![format!("roomlayout {cmd}"), format!("seed {}", cfg.seed)];
    h.extend(cfg.to_toml().lines().filter(|l| !l.is_empty()).map(String::from));
    h
}

fn cmd_synth(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let (bundle, gt) = generate_sequence(&cfg.room, &cfg.trajectory, &cfg.intrinsics, &cfg.noise, cfg.seed)?;
    info!("generated {} detections over {} frames", bundle.measurements.len(), bundle.poses.len());
    save_sequence(&bundle, &out.join("measurements.jsonl"), &out.join("poses.traj"))?;
    export_mesh(&ground_truth_layout(&cfg.room)?, &header("synth", cfg), &out.join("ground_truth.obj"))?;
    let record = serde_json::to_string_pretty(&gt).expect("serializable ground truth") + "\n";
    write_file(&out.join("ground_truth.json"), record)
}

fn cmd_reconstruct(
    cfg: &CliConfig,
    a: &ReconstructArgs,
    out: &Path,
    stdout: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    let bundle = load_sequence(&a.measurements, &a.poses, cfg.intrinsics)?;
    let (result, report) = reconstruct(&bundle, &cfg.pipeline);
    write_file(&out.join("report.json"), report.to_json())?;
    let layout = result.map_err(|e| CliError::Failure(format!("{}: {e}", e.kind())))?;
    export_mesh(&layout, &header("reconstruct", cfg), &out.join("layout.obj"))?;
    writeln!(stdout, "accepted {} wall segments on {} planes", layout.wall_count(), report.counts.selected_walls).ok();
    Ok(())
}

fn cmd_eval_planes(
    cfg: &CliConfig,
    a: &EvalPlanesArgs,
    out: &Path,
    stdout: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    let pred = parse_measurements(&read_file(&a.pred)?)?;
    let gt = parse_measurements(&read_file(&a.gt)?)?;
    let report = match evaluate_planes(&pred, &gt, &cfg.intrinsics, a.iou, a.stride) {
        Ok(r) => r,
        Err(MetricsError::EmptyInput) => {
            warn!("no prediction matches a ground-truth detection");
            return Err(CliError::Failure("empty match: no prediction reaches the IoU threshold".into()));
        }
        Err(e) => return Err(CliError::Failure(e.to_string())),
    };
    let text = format_plane_report(&report);
    write!(stdout, "{text}").ok();
    write_file(&out.join("eval_planes.txt"), &text)?;
    let dump = serde_json::to_string_pretty(&report).expect("serializable report") + "\n";
    write_file(&out.join("eval_planes.json"), dump)
}

fn cmd_eval_2d(a: &Eval2dArgs, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let pred = parse_pgm(&read_file(&a.pred)?).map_err(|e| CliError::Io(format!("{}: {e}", a.pred.display())))?;
    let gt = parse_pgm(&read_file(&a.gt)?).map_err(|e| CliError::Io(format!("{}: {e}", a.gt.display())))?;
    let err = pixel_error_2d(&pred, &gt).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(stdout, "pixel error: {err:.2}%").ok();
    let dump = serde_json::to_string_pretty(&json!({ "pixel_error_percent": err })).expect("json") + "\n";
    write_file(&out.join("eval_2d.json"), dump)
}

fn cmd_render(cfg: &CliConfig, a: &RenderArgs, out: &Path) -> Result<(), CliError> {
    let all = parse_measurements(&read_file(&a.measurements)?)?;
    let known = match &a.poses {
        Some(p) => parse_poses(&read_file(p)?)?.contains_key(&a.frame),
        None => a.frame >= 1 && all.iter().any(|m| m.frame_id >= a.frame),
    };
    if !known {
        return Err(CliError::Usage(format!("unknown frame {}", a.frame)));
    }
    let frame: Vec<_> = all.into_iter().filter(|m| m.frame_id == a.frame).collect();
    let img = render_layout2d(&frame, &cfg.intrinsics);
    write_file(&out.join(format!("frame_{}.pgm", a.frame)), format_pgm(&img))?;
    write_file(&out.join(format!("frame_{}.ppm", a.frame)), format_ppm(&img))
}

fn execute(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let cfg = resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let resolved = cfg.to_toml();
    info!("resolved configuration:\n{resolved}");
    if let Command::Synth = cli.command {
        cfg.trajectory.validate()?;
        cfg.noise.validate()?;
        cfg.room.validate()?;
    }
    prepare_out(&cli.out, cli.force)?;
    write_file(&cli.out.join("config.toml"), &resolved)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, &cli.out),
        Command::Reconstruct(a) => cmd_reconstruct(&cfg, a, &cli.out, stdout),
        Command::EvalPlanes(a) => cmd_eval_planes(&cfg, a, &cli.out, stdout),
        Command::Eval2d(a) => cmd_eval_2d(a, &cli.out, stdout),
        Command::Render(a) => cmd_render(&cfg, a, &cli.out),
    }
}

/// Runs the tool on `args` (including the program name), writing normal
/// output to `stdout` and diagnostics to `stderr`. Returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if e.use_stderr() {
                write!(stderr, "{text}").ok();
            } else {
                write!(stdout, "{text}").ok();
            }
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            writeln!(stderr, "error: thread pool: {e}").ok();
            return 2;
        }
    };
    match pool.install(|| execute(&cli, stdout)) {
        Ok(()) => 0,
        Err(e) => {
            writeln!(stderr, "error: {e}").ok();
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
