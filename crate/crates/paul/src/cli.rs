//! Command-line driver. [`run`] never panics on user input and maps every
//! failure to an exit code: 2 for configuration, parse or missing-input
//! errors, 3 for numerical failures, 1 for other I/O problems.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use paul_core::data::{generate_synthetic, SynthSpec};
use paul_core::metrics::{evaluate, latent_rows, MetricConfig, MetricError};
use paul_core::networks::{CodeMode, ModelParams};
use paul_core::trainer::{fit, predict, Mode, Observer, StepReport, TrainConfig};
use paul_core::{suite, DataError, TrainError};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::checkpoint::{self, CheckpointError};
use crate::kpt::{self, KptError};
use crate::latents;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "paul", version, about = "Learn 3D shape models from 2D keypoint tracks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Worker cap; all work currently runs on one thread.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Paul,
    Adl,
    AdlLowrank,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CodeModeArg {
    FreeCode,
    Lifting,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a synthetic-data spec.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a KPT dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long)]
        mode: Option<ModeArg>,
        #[arg(long)]
        code_mode: Option<CodeModeArg>,
        #[arg(long, value_name = "K")]
        bottleneck: Option<usize>,
    },
    /// Score a checkpoint against a dataset with ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
    },
    /// Lift every frame of a dataset and write the shapes as a GT3D section.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
    },
    /// Write the latent code of every frame as CSV.
    ExportLatent {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

/// Errors while reading inputs are the caller's fault (exit 2).
fn input_error(e: KptError) -> CliError {
    CliError::config(e.to_string())
}

fn output_error(e: impl std::fmt::Display) -> CliError {
    CliError::io(e.to_string())
}

fn checkpoint_read_error(e: CheckpointError) -> CliError {
    CliError::config(e.to_string())
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::EmptyDataset | TrainError::Data(_) => CliError::config(e.to_string()),
        TrainError::Checkpoint(_) => CliError::io(e.to_string()),
        TrainError::Model(paul_core::ModelError::Bottleneck { .. })
        | TrainError::Model(paul_core::ModelError::Layout(_))
        | TrainError::Model(paul_core::ModelError::CodeMode(_))
        | TrainError::Model(paul_core::ModelError::FrameOutOfRange { .. }) => CliError::config(e.to_string()),
        _ => CliError::numeric(e.to_string()),
    }
}

fn metric_error(e: MetricError) -> CliError {
    match e {
        MetricError::Model(t) => train_error(t),
        other => CliError::config(other.to_string()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(output_error)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn check_threads(common: &Common) -> Result<(), CliError> {
    if common.threads == 0 {
        return Err(CliError::config("--threads must be at least 1"));
    }
    Ok(())
}

fn synth(common: &Common) -> Result<(), CliError> {
    let mut spec: SynthSpec = match &common.config {
        Some(p) => read_json(p)?,
        None => SynthSpec::new(30, 500, 2, 0),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let dataset = generate_synthetic(&spec).map_err(|e| match e {
        DataError::InfeasibleOcclusion { .. } => CliError::numeric(e.to_string()),
        other => CliError::config(other.to_string()),
    })?;
    prepare_out(&common.out)?;
    write_json(&common.out.join("config.resolved.json"), &spec)?;
    kpt::write_path(&common.out.join("dataset.kpt"), &dataset).map_err(output_error)?;
    println!("wrote {} frames of {} points", dataset.len(), dataset.points());
    Ok(())
}

struct FileObserver {
    out: PathBuf,
    log: BufWriter<fs::File>,
    config: TrainConfig,
    start: Instant,
}

impl Observer for FileObserver {
    fn on_step(&mut self, report: &StepReport) -> Result<(), TrainError> {
        let line = serde_json::to_string(report).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        writeln!(self.log, "{line}").map_err(|e| TrainError::Checkpoint(format!("train.log.jsonl: {e}")))
    }

    fn on_checkpoint(&mut self, step: usize, params: &ModelParams, is_final: bool) -> Result<(), TrainError> {
        let name = if is_final {
            "ckpt-final.paulckpt".to_string()
        } else {
            format!("ckpt-{step:06}.paulckpt")
        };
        checkpoint::save(&self.out.join(name), params, &self.config).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    fn on_warning(&mut self, message: &str) {
        eprintln!("warning: {message}");
    }

    fn elapsed(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

fn train(
    common: &Common,
    data: &Path,
    mode: Option<ModeArg>,
    code_mode: Option<CodeModeArg>,
    bottleneck: Option<usize>,
) -> Result<(), CliError> {
    let mut config: TrainConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(m) = mode {
        config.mode = match m {
            ModeArg::Paul => Mode::Paul,
            ModeArg::Adl => Mode::Adl,
            ModeArg::AdlLowrank => Mode::AdlLowrank,
        };
    }
    if let Some(c) = code_mode {
        config.code_mode = match c {
            CodeModeArg::FreeCode => CodeMode::FreeCode,
            CodeModeArg::Lifting => CodeMode::Lifting,
        };
    }
    if let Some(k) = bottleneck {
        config.bottleneck = k;
    }
    config.validate().map_err(train_error)?;
    let dataset = kpt::read_path(data).map_err(input_error)?;
    prepare_out(&common.out)?;
    write_json(&common.out.join("config.resolved.json"), &config)?;
    let log_path = common.out.join("train.log.jsonl");
    let log = fs::File::create(&log_path).map_err(|e| CliError::io(format!("{}: {e}", log_path.display())))?;
    let mut observer = FileObserver {
        out: common.out.clone(),
        log: BufWriter::new(log),
        config: config.clone(),
        start: Instant::now(),
    };
    let outcome = fit(&dataset, &config, &mut observer).map_err(train_error)?;
    observer.log.flush().map_err(output_error)?;
    match outcome.last {
        Some(r) => println!("step {}: total loss {:.6e}", r.step, r.loss.total),
        None => println!("no steps run; wrote initial checkpoint"),
    }
    Ok(())
}

fn eval(common: &Common, data: &Path, ckpt: &Path) -> Result<(), CliError> {
    let cfg: MetricConfig = load_config(common.config.as_deref())?;
    let ck = checkpoint::load(ckpt).map_err(checkpoint_read_error)?;
    let dataset = kpt::read_path(data).map_err(input_error)?;
    let report = evaluate(&dataset, &ck.params, &cfg, ck.config.adaptive_scheme).map_err(metric_error)?;
    prepare_out(&common.out)?;
    write_json(&common.out.join("eval.report.json"), &report)?;
    println!(
        "mean NE {:.6e}  stacked NE {:.6e}  mean MPJPE {:.6e}  ({} frames, {} skipped)",
        report.mean_ne,
        report.stacked_ne,
        report.mean_mpjpe,
        report.frames.len(),
        report.skipped.len()
    );
    Ok(())
}

fn infer(common: &Common, data: &Path, ckpt: &Path) -> Result<(), CliError> {
    let ck = checkpoint::load(ckpt).map_err(checkpoint_read_error)?;
    let dataset = kpt::read_path(data).map_err(input_error)?;
    let mut shapes = Vec::with_capacity(dataset.len());
    for frame in dataset.frames() {
        let p = predict(&ck.params, frame, ck.config.adaptive_scheme)
            .map_err(|e| CliError::config(format!("frame {}: {e}", frame.frame_id)))?;
        shapes.push(p.camera);
    }
    prepare_out(&common.out)?;
    let path = common.out.join("predictions.kpt");
    let file = fs::File::create(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    kpt::write_frames(&mut w, dataset.frames(), Some(&shapes)).map_err(output_error)?;
    w.flush().map_err(output_error)?;
    println!("wrote {} predictions", shapes.len());
    Ok(())
}

fn export_latent(common: &Common, data: &Path, ckpt: &Path) -> Result<(), CliError> {
    let ck = checkpoint::load(ckpt).map_err(checkpoint_read_error)?;
    let dataset = kpt::read_path(data).map_err(input_error)?;
    let rows = latent_rows(&dataset, &ck.params);
    prepare_out(&common.out)?;
    let path = common.out.join("latents.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    latents::write_csv(&mut w, &rows).map_err(output_error)?;
    w.flush().map_err(output_error)?;
    println!("wrote {} latent rows", rows.len());
    Ok(())
}

fn gradcheck(seeds: u64) -> Result<(), CliError> {
    let entries = suite::run(seeds);
    let mut worst: f64 = 0.0;
    for e in &entries {
        println!(
            "{:<42} {:>11.3e}  tol {:.0e}  {}",
            e.name,
            e.max_relative_error,
            e.tolerance,
            if e.passed() { "ok" } else { "FAIL" }
        );
        worst = worst.max(e.max_relative_error);
    }
    println!("max relative error: {worst:.3e}");
    if entries.iter().all(|e| e.passed()) {
        Ok(())
    } else {
        Err(CliError::numeric("gradient check failed"))
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth { common } => {
            check_threads(common)?;
            synth(common)
        }
        Command::Train {
            common,
            data,
            mode,
            code_mode,
            bottleneck,
        } => {
            check_threads(common)?;
            train(common, data, *mode, *code_mode, *bottleneck)
        }
        Command::Eval { common, data, ckpt } => {
            check_threads(common)?;
            eval(common, data, ckpt)
        }
        Command::Infer { common, data, ckpt } => {
            check_threads(common)?;
            infer(common, data, ckpt)
        }
        Command::ExportLatent { common, data, ckpt } => {
            check_threads(common)?;
            export_latent(common, data, ckpt)
        }
        Command::Gradcheck { common, seeds } => {
            check_threads(common)?;
            gradcheck(*seeds)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
