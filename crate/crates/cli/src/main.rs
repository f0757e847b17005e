//! `nyskoop`: generate trajectories, fit Koopman estimators, inspect their
//! spectra, forecast and benchmark.

mod bench;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use nyskoop::estimators::EstimatorKind;

use crate::config::KernelArgs;

#[derive(Parser, Debug)]
#[command(name = "nyskoop", version, about = "Nystrom kernel estimators of Koopman operators")]
struct Cli {
    /// JSON file with default values for the command's flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a trajectory and write it as CSV or binary
    Generate(GenerateArgs),
    /// Fit an estimator and write a model file
    Fit(FitArgs),
    /// Eigenvalues (with implied timescales) and eigenfunction values
    Spectrum(SpectrumArgs),
    /// Koopman modes of the state observable
    Modes(ModesArgs),
    /// Multi-step forecasts from a model file
    Forecast(ForecastArgs),
    /// Accuracy and timing sweeps, written as JSON lines
    Benchmark(BenchmarkArgs),
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: nyskoop::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz63,
    Ar1,
    LinearGaussian,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub system: Option<SystemKind>,
    /// Number of recorded states [default: 10000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Lorenz integration step [default: 0.01]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Record every k-th integration step (Lorenz) [default: 1]
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Integration steps dropped before recording (Lorenz) [default: 0]
    #[arg(long)]
    pub transient: Option<usize>,
    /// Noise seed; for Lorenz it also draws the initial condition when --x0 is absent [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// AR(1) coefficient [default: 0.9]
    #[arg(long)]
    pub a: Option<f64>,
    /// AR(1) noise standard deviation [default: 1.0]
    #[arg(long)]
    pub std: Option<f64>,
    /// Linear-Gaussian transition matrix, rows separated by ';'
    #[arg(long)]
    pub matrix: Option<String>,
    /// Linear-Gaussian noise covariance, rows separated by ';' [default: identity]
    #[arg(long)]
    pub noise_cov: Option<String>,
    /// Initial state, comma separated
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Output path; `.csv` selects CSV, anything else the binary format
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitArgs {
    /// Trajectory file (CSV or binary)
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_estimator)]
    pub estimator: Option<EstimatorKind>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    /// Time lag between input and output states [default: 1]
    #[arg(long)]
    pub lag: Option<usize>,
    /// Number of Nystrom centers
    #[arg(long)]
    pub m: Option<usize>,
    /// Rank (PCR / RRR)
    #[arg(long)]
    pub r: Option<usize>,
    /// Tikhonov regularization (KRR / RRR) [default: 1e-6]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Center sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the same indices for input and output centers [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shared_centers: Option<bool>,
    /// Fraction of the pairs (from the start) used for training [default: 1.0]
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Largest n accepted by the exact estimators [default: 5000]
    #[arg(long)]
    pub max_n: Option<usize>,
    /// Model output path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include the middle matrix W in the report [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_w: Option<bool>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideArg {
    Left,
    Right,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Lag the model was fitted with [default: 1]
    #[arg(long)]
    pub lag: Option<usize>,
    /// Physical time per step [default: 1.0]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Spectrum JSON output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// States at which to evaluate eigenfunctions
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Eigenfunction CSV output (requires --points)
    #[arg(long)]
    pub eigenfunctions: Option<PathBuf>,
    /// Which eigenfunctions to export [default: left]
    #[arg(long, value_enum)]
    pub side: Option<SideArg>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModesArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Modes CSV output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastMode {
    Onestep,
    Kmd,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ForecastArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Initial states, one per row
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Repeated one-step rollout or Koopman mode propagation [default: onestep]
    #[arg(long, value_enum)]
    pub mode: Option<ForecastMode>,
    /// Number of model steps [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    pub horizon: Option<i64>,
    /// Forecast CSV output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Sweep,
    Rates,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    /// Trajectory file; the first 80% trains, the last 10% tests
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated estimator names
    #[arg(long)]
    pub estimators: Option<String>,
    /// Comma-separated training sizes
    #[arg(long)]
    pub n: Option<String>,
    /// Centers for the sweep mode [default: 250]
    #[arg(long)]
    pub m: Option<usize>,
    /// Rank for PCR / RRR [default: 25]
    #[arg(long)]
    pub r: Option<usize>,
    /// Regularization; in rates mode the value at n = 1, scaled by n^{-1/2} [default: 1e-6]
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    /// Comma-separated center sampling seeds [default: 0]
    #[arg(long)]
    pub seeds: Option<String>,
    /// sweep: fixed m; rates: m = ceil(c sqrt(n)) [default: sweep]
    #[arg(long, value_enum)]
    pub mode: Option<BenchMode>,
    /// The constant c of the rates mode [default: 2.0]
    #[arg(long)]
    pub rate_c: Option<f64>,
    /// Lag of the training pairs [default: 1]
    #[arg(long)]
    pub train_lag: Option<usize>,
    /// Comma-separated rollout horizons (in units of the training lag) [default: 1]
    #[arg(long)]
    pub horizon: Option<String>,
    /// Largest n accepted by the exact estimators [default: 5000]
    #[arg(long)]
    pub max_n: Option<usize>,
    /// External baseline results to append (CSV with estimator,n columns)
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// JSON-lines output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> error::CliResult<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Generate(a) => commands::generate(config::resolve(&a, cfg)?),
        Command::Fit(a) => commands::fit(config::resolve(&a, cfg)?),
        Command::Spectrum(a) => commands::spectrum(config::resolve(&a, cfg)?),
        Command::Modes(a) => commands::modes(config::resolve(&a, cfg)?),
        Command::Forecast(a) => commands::forecast(config::resolve(&a, cfg)?),
        Command::Benchmark(a) => bench::benchmark(config::resolve(&a, cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nyskoop: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
