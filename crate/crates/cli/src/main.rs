//! `nfmimo`: synthesize scenes, simulate measurements, reconstruct and score.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::settings::Snr;

#[derive(Parser, Debug)]
#[command(
    name = "nfmimo",
    version,
    about = "Near-field MIMO radar imaging pipeline"
)]
struct Cli {
    /// JSON file with flag defaults (top-level keys for every subcommand,
    /// nested objects per subcommand).
    #[arg(long, global = true)]
    settings: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset of scenes.
    Synth(SynthArgs),
    /// Simulate noisy measurements of a scene.
    Simulate(SimulateArgs),
    /// Normalized adjoint image |A^H y| / max.
    Adjoint(ReconArgs),
    /// Backprojection A^H y / M.
    Bp(ReconArgs),
    /// TV-regularized least squares.
    Tv(TvArgs),
    /// PSNR and SSIM of a reconstruction against ground truth.
    Metrics(MetricsArgs),
    /// Condition numbers of target-constellation submatrices.
    Condnum(CondnumArgs),
    /// Paired (adjoint image, truth) tensors in train/val/test partitions.
    ExportDataset(ExportArgs),
    /// Per-scene reconstruction timings.
    Bench(BenchArgs),
}

impl Command {
    fn section(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Simulate(_) => "simulate",
            Command::Adjoint(_) => "adjoint",
            Command::Bp(_) => "bp",
            Command::Tv(_) => "tv",
            Command::Metrics(_) => "metrics",
            Command::Condnum(_) => "condnum",
            Command::ExportDataset(_) => "export-dataset",
            Command::Bench(_) => "bench",
        }
    }
}

/// Imaging configuration; the reference setting when `--config` is absent.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the number of frequency steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[default]
    Random,
    Ellipsoid,
    Resolution,
}

/// Three comma-separated numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Triple(pub [f64; 3]);

impl FromStr for Triple {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{s:?}: {e}"))?;
        <[f64; 3]>::try_from(v)
            .map(Triple)
            .map_err(|_| format!("{s:?}: expected three comma-separated numbers"))
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub cfg: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of random scenes [default: 1].
    #[arg(long)]
    pub count: Option<usize>,
    /// Base seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Apply uniform random phases [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub random_phase: Option<bool>,
    #[arg(long, value_enum)]
    pub kind: Option<SceneKind>,
    /// Ellipsoid semi-axes in meters, `a,b,c`.
    #[arg(long)]
    pub semi_axes: Option<Triple>,
    /// Ellipsoid center in meters [default: grid center].
    #[arg(long)]
    pub center: Option<Triple>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub cfg: ConfigArgs,
    /// Scene volume tensor.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Measurement SNR in dB, or `inf`.
    #[arg(long)]
    pub snr: Option<Snr>,
    /// Noise seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct ReconArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub cfg: ConfigArgs,
    /// Measurement tensor.
    #[arg(long)]
    pub meas: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the magnitude scaled to a peak of 1 instead of the complex
    /// volume (always on for `adjoint`).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct TvArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub recon: ReconArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub outer: Option<usize>,
    #[arg(long)]
    pub cg_iters: Option<usize>,
    #[arg(long)]
    pub cg_tol: Option<f64>,
    #[arg(long)]
    pub objective_tol: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub recon: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct CondnumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub cfg: ConfigArgs,
    /// 2 or 4 [default: 2].
    #[arg(long)]
    pub targets: Option<usize>,
    /// `xy` (cross-range) or `z` (range) [default: xy].
    #[arg(long)]
    pub orientation: Option<String>,
    /// Separations in cm: `start:stop:step` (inclusive) or a comma list
    /// [default: 1:20:1].
    #[arg(long)]
    pub sep_cm: Option<String>,
    /// CSV destination [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct ExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `train,val,test` scene counts [default: 800,100,100].
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 30]
    #[arg(long)]
    pub snr: Option<Snr>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub random_phase: Option<bool>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub cfg: ConfigArgs,
    /// [default: 100]
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Comma list of adjoint, bp, tv [default: adjoint,bp].
    #[arg(long)]
    pub methods: Option<String>,
    /// Scenes timed for TV, which is far slower [default: 3].
    #[arg(long)]
    pub tv_scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 30]
    #[arg(long)]
    pub snr: Option<Snr>,
    /// JSON destination [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return CliError::usage(e.render().to_string().trim_end()).report(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

fn run(cli: Cli) -> error::CliResult<()> {
    let settings = settings::load(cli.settings.as_deref())?;
    let section = cli.command.section();
    use settings::resolve;
    match &cli.command {
        Command::Synth(a) => commands::synth(resolve(a, &settings, section)?),
        Command::Simulate(a) => commands::simulate(resolve(a, &settings, section)?),
        Command::Adjoint(a) => commands::adjoint(resolve(a, &settings, section)?),
        Command::Bp(a) => commands::bp(resolve(a, &settings, section)?),
        Command::Tv(a) => commands::tv(resolve(a, &settings, section)?),
        Command::Metrics(a) => commands::metrics(resolve(a, &settings, section)?),
        Command::Condnum(a) => commands::condnum(resolve(a, &settings, section)?),
        Command::ExportDataset(a) => commands::export_dataset(resolve(a, &settings, section)?),
        Command::Bench(a) => commands::bench(resolve(a, &settings, section)?),
    }
}
