//! `dualflow`: batch front end for the duality checks.
//!
//! One TOML config drives everything; flags override the seed, sample count,
//! worker count and output directory for quick sweeps. Exit codes are a
//! stable contract: 0 = all requested work passed, 1 = a check failed or a
//! runtime error occurred, 2 = the config or invocation is invalid.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::{ConfigError, RunConfig};
use dualflow::{FlowError, McError};

#[derive(Debug, Parser)]
#[command(
    name = "dualflow",
    version,
    about = "Absorbing Euler-Maruyama flows, their reflected duals, and duality checks"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "dualflow.toml")]
    config: PathBuf,
    /// Override mc.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override mc.n_samples.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Worker threads; beats DUALFLOW_WORKERS, which beats mc.workers.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for CSV artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Evaluate the coefficient conditions and the one-step monotonicity
    /// condition for the configured model and step size.
    CheckCoefficients,
    /// Run one seeded noise draw, build the forward absorbing flow and its
    /// dual, and dump both snapshot tables as CSV.
    Simulate {
        /// Drive the flow with all-zero increments (drift only) — a debug aid.
        #[arg(long)]
        zero_noise: bool,
    },
    /// Run the configured checks and write the aggregated report CSV.
    Verify,
    /// Dump the seeded noise increments used by `simulate` as CSV.
    DumpNoise,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            // Precondition violations a config edit fixes are usage errors.
            McError::SigmaNotConstant { .. }
            | McError::NotEnoughSamples { .. }
            | McError::NotEnoughLevels { .. } => {
                CliError::Config(ConfigError::Invalid(e.to_string()))
            }
            McError::Flow(f) => f.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

fn resolve_workers(cli: &Cli, cfg: &RunConfig) -> Result<usize, CliError> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(ConfigError::Invalid("--workers must be at least 1".into()).into());
        }
        return Ok(w);
    }
    if let Ok(raw) = std::env::var("DUALFLOW_WORKERS") {
        let w: usize = raw.parse().map_err(|_| {
            ConfigError::Invalid(format!("DUALFLOW_WORKERS must be a positive integer, got {raw:?}"))
        })?;
        if w == 0 {
            return Err(ConfigError::Invalid("DUALFLOW_WORKERS must be at least 1".into()).into());
        }
        return Ok(w);
    }
    Ok(cfg.mc.workers.unwrap_or(1))
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if let Some(samples) = cli.samples {
        cfg.mc.n_samples = samples;
    }
    cfg.validate()?;
    let workers = resolve_workers(cli, &cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot build worker pool: {e}")))?;
    pool.install(|| match cli.cmd {
        Cmd::CheckCoefficients => commands::check_coefficients(&cfg),
        Cmd::Simulate { zero_noise } => commands::simulate(&cfg, zero_noise, &cli.out),
        Cmd::Verify => commands::verify(&cfg, &cli.out),
        Cmd::DumpNoise => commands::dump_noise(&cfg, &cli.out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
