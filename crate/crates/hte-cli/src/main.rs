//! Command-line surface for the single-index CATE estimator.
//!
//! Three subcommands: `fit` runs the full pipeline on a CSV file and writes
//! a JSON artifact plus a coefficient table; `simulate` drives the Monte
//! Carlo harness and writes a replication-summary CSV; `link-curve` turns a
//! fit artifact into plot-ready link-function data. All outputs are
//! deterministic under `--seed`; `HTE_THREADS` caps worker threads.

mod artifact;
mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit codes beyond the usual 0/1: 2 usage (clap), 3 missing/unreadable
/// input column, 4 invalid data values (e.g. non-binary treatment), 5 rank
/// deficiency or singular covariance.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: u8,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { message: message.into(), code }
    }

    fn from_core(err: hte_core::Error) -> Self {
        let code = match &err {
            hte_core::Error::SingularDesign(_) | hte_core::Error::SingularCovariance(_) => 5,
            hte_core::Error::InvalidInput(_) => 4,
            _ => 1,
        };
        Self { message: err.to_string(), code }
    }
}

#[derive(Parser)]
#[command(
    name = "hte",
    about = "Doubly robust heterogeneous treatment effect estimation with a single-index model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator on a CSV dataset and write a JSON fit artifact.
    Fit(FitArgs),
    /// Run Monte Carlo replications of a benchmark scenario.
    Simulate(SimulateArgs),
    /// Tabulate the estimated link function from a fit artifact.
    LinkCurve(LinkCurveArgs),
}

#[derive(clap::Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome column name.
    #[arg(long)]
    pub outcome: String,
    /// Treatment column name (values must be 0 or 1).
    #[arg(long)]
    pub treatment: String,
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Truncation: an integer or "auto" for BIC selection.
    #[arg(long, default_value = "6")]
    pub k: String,
    /// Number of optimizer starts.
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 100)]
    pub boot: usize,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lower propensity clipping bound; upper is symmetric.
    #[arg(long, default_value_t = 0.025)]
    pub clip: f64,
    /// Propensity model family.
    #[arg(long, default_value = "logistic", value_parser = ["logistic", "probit"])]
    pub propensity: String,
    /// Outcome regression feature map.
    #[arg(long = "outcome-map", default_value = "linear", value_parser = ["linear", "quadratic-only"])]
    pub outcome_map: String,
    /// Output artifact path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional coefficient-table CSV path.
    #[arg(long = "coef-out")]
    pub coef_out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// Link function of the generating model.
    #[arg(long, value_parser = ["linear", "cubic"])]
    pub link: String,
    /// Covariate law.
    #[arg(long = "cov", value_parser = ["normal", "uniform"])]
    pub covariate_law: String,
    /// Sample size per replicate.
    #[arg(long)]
    pub n: usize,
    /// Target treated proportion.
    #[arg(long)]
    pub prop: f64,
    /// Number of Monte Carlo replicates.
    #[arg(long)]
    pub reps: usize,
    /// Truncation: an integer or "auto".
    #[arg(long, default_value = "6")]
    pub k: String,
    /// Number of optimizer starts.
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    /// Bootstrap resamples per replicate.
    #[arg(long, default_value_t = 100)]
    pub boot: usize,
    /// Master RNG seed (required: outputs are a function of it).
    #[arg(long)]
    pub seed: u64,
    /// Misspecification triplet for (propensity, outcome, single-index),
    /// e.g. TTT or FTF; T = correctly specified.
    #[arg(long, default_value = "TTT")]
    pub misspec: String,
    /// Output CSV path for the replication summary.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the first replicate's dataset to this CSV path.
    #[arg(long = "emit-data")]
    pub emit_data: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct LinkCurveArgs {
    /// Fit artifact written by `hte fit`.
    #[arg(long)]
    pub artifact: PathBuf,
    /// Grid specification start:stop:step, e.g. "-3:3:0.05".
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads() {
    if let Ok(raw) = std::env::var("HTE_THREADS") {
        if let Ok(t) = raw.parse::<usize>() {
            if t >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::run_fit(&args),
        Command::Simulate(args) => commands::run_simulate(&args),
        Command::LinkCurve(args) => commands::run_link_curve(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
