//! `fld`: training, evaluation, synthesis, gating and curriculum runs with
//! CSV/JSON outputs.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fld_core::curriculum::{Preset, SamplerKind};
use fld_core::training::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "fld", version, about = "Periodic latent dynamics experiments")]
pub struct Cli {
    /// Where to write the run manifest (defaults next to the outputs).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint, loss CSV and manifest.
    Train(TrainArgs),
    /// Relative prediction error per horizon for one or more checkpoints.
    Eval(EvalArgs),
    /// Two-dimensional phase manifold of a corpus.
    Manifold(ManifoldArgs),
    /// Synthesize a trajectory from a latent parameterization.
    Synth(SynthArgs),
    /// Gate frames read from stdin, one JSON record per step on stdout.
    Gate(GateArgs),
    /// Run the curriculum simulation and write trace CSVs.
    Curriculum(CurriculumArgs),
    /// Write the built-in synthetic corpus as CSV files plus a manifest.
    GenCorpus(GenCorpusArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// fld, pae (fld with N = 0), vae or ff.
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    /// Corpus manifest (JSON).
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Latent channels.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Window length H.
    #[arg(long)]
    pub window: Option<usize>,
    /// Propagation horizon N.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Held-out trajectory CSV.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// The CSV has a header row.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 50)]
    pub horizons: usize,
    /// Error-curve CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ManifoldArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Trajectory CSV (encoded at `--at`) or JSON `{"phi": [...], "theta": {"f", "a", "b"}}`.
    #[arg(long)]
    pub theta_from: PathBuf,
    /// First frame of the encoded window when `--theta-from` is a trajectory.
    #[arg(long, default_value_t = 0)]
    pub at: usize,
    #[arg(long)]
    pub header: bool,
    /// Frames to synthesize, or blend length with `--interp-to`.
    #[arg(long)]
    pub steps: usize,
    /// Target parameterization, same formats as `--theta-from`.
    #[arg(long)]
    pub interp_to: Option<PathBuf>,
    /// Frames held before and after the blend.
    #[arg(long, default_value_t = 0)]
    pub hold: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, conflicts_with = "calibrate", required_unless_present = "calibrate")]
    pub epsilon: Option<f64>,
    /// Corpus manifest to set ε from.
    #[arg(long)]
    pub calibrate: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    pub quantile: f64,
    #[arg(long, default_value_t = 5)]
    pub stride: usize,
    /// Initial state, JSON as for `synth --theta-from`.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurriculumArgs {
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: SamplerKind,
    /// Share of unlearnable motions: 0, 10 or 60.
    #[arg(long, value_parser = parse_preset, default_value = "60")]
    pub preset: Preset,
    #[arg(long, default_value_t = 4000)]
    pub iters: usize,
    /// `N` for seeds 0..N, or a comma-separated list.
    #[arg(long, default_value = "1")]
    pub seeds: String,
    /// JSON simulation config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub envs: Option<usize>,
    /// Add a predicted motion type per row from the oracle classifier.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub per_family: usize,
    #[arg(long, default_value_t = 2000)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: fld_core::FldError| e.to_string())
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    s.parse().map_err(|e: fld_core::FldError| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: fld_core::FldError| e.to_string())
}

/// Bad invocation: reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FLD_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| UsageError(format!("FLD_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(UsageError("FLD_THREADS must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}\n\nFor more information, try '--help'.");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
