//! `twinbeam`: trace digital twins into beam lookup tables, choose twins
//! and sweep shortlists under budgets, dispatch samples between a local
//! model and the twin service, and score everything against the exhaustive
//! sweep.
//!
//! Each command takes one TOML run configuration and writes its artifacts
//! plus a provenance manifest (input paths and SHA-256 hashes) into the
//! configured output directory. Identically seeded runs produce
//! byte-identical artifacts; timestamps go only to the `run.log` sidecar.
//! Set `TWINBEAM_WORKERS` to bound the tracing worker pool — results do
//! not depend on it.

mod commands;
mod config;
mod manifest;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;

use config::{CommModelChoice, Overrides};

/// Failure class attached to the error chain; decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Unusable configuration or input data (exit 2).
    Config,
    /// Missing or inconsistent build artifacts (exit 3).
    Artifact,
    /// No decision satisfies the budgets (exit 4).
    Infeasible,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Config => f.write_str("configuration error"),
            Fault::Artifact => f.write_str("artifact error"),
            Fault::Infeasible => f.write_str("no feasible decision"),
        }
    }
}

/// A fresh error message already tagged with its fault class.
pub fn fault(class: Fault, msg: impl fmt::Display) -> anyhow::Error {
    anyhow::anyhow!("{msg}").context(class)
}

/// Wrap a source error and tag it with its fault class.
pub fn classify<E>(class: Fault, err: E) -> anyhow::Error
where
    E: std::error::Error + Send + Sync + 'static,
{
    anyhow::Error::new(err).context(class)
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Fault>() {
        Some(Fault::Config) => 2,
        Some(Fault::Artifact) => 3,
        Some(Fault::Infeasible) => 4,
        None => 1,
    }
}

#[derive(Parser)]
#[command(name = "twinbeam", version, about = "Digital-twin beam selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace every configured twin into a beam-SNR lookup table.
    Trace(RunArgs),
    /// Sweep the (alpha, budget) grid and log every twin/K decision.
    Select(RunArgs),
    /// Route samples between the local model and the twin service.
    Pipeline(RunArgs),
    /// Score each twin's table against the measurement campaign.
    Evaluate(RunArgs),
    /// Compare two codebook manifests pattern by pattern.
    AntennaCompare(CompareArgs),
}

/// Flags shared by the config-driven commands. A value given here replaces
/// its config counterpart; sweep lists collapse to the single given value.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pin the objective weight sweep to one value.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Pin the beam-sweep budget to one value, in milliseconds.
    #[arg(long)]
    pub comm_budget_ms: Option<f64>,
    /// Override the computation budget, in cost units.
    #[arg(long)]
    pub comp_budget: Option<f64>,
    /// Override the sweep cost model.
    #[arg(long, value_enum)]
    pub comm_model: Option<CommModelChoice>,
    /// Override the largest shortlist considered.
    #[arg(long)]
    pub k_max: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            alpha: self.alpha,
            comm_budget_ms: self.comm_budget_ms,
            comp_budget: self.comp_budget,
            comm_model: self.comm_model,
            k_max: self.k_max,
        }
    }
}

/// Arguments for `antenna-compare`.
#[derive(Debug, Args)]
pub struct CompareArgs {
    /// First codebook manifest (TOML).
    #[arg(long)]
    pub manifest_a: PathBuf,
    /// Second codebook manifest (TOML).
    #[arg(long)]
    pub manifest_b: PathBuf,
    /// Output directory for the comparison artifacts.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn run(cli: &Cli) -> Result<()> {
    init_worker_pool()?;
    match &cli.command {
        Command::Trace(args) => commands::cmd_trace(args),
        Command::Select(args) => commands::cmd_select(args),
        Command::Pipeline(args) => commands::cmd_pipeline(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::AntennaCompare(args) => commands::cmd_antenna_compare(args),
    }
}

/// Bound the data-parallel worker pool when `TWINBEAM_WORKERS` is set.
fn init_worker_pool() -> Result<()> {
    let Ok(raw) = std::env::var("TWINBEAM_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        fault(Fault::Config, format!("TWINBEAM_WORKERS must be a positive integer, got {raw:?}"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("initializing the worker pool")?;
    Ok(())
}
