//! Command-line experiment runner.
//!
//! ```text
//! bridgesampler <validate|sample|compare|converge> --config <path> [--set key=value ...] [--out dir]
//! ```
//!
//! Every command validates the whole configuration, computes its results in
//! memory and only then writes files, so a failing run leaves `--out`
//! untouched. Exit codes: 0 on success, 1 when a check fails or the
//! numerics break down, 2 for configuration errors.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use thiserror::Error;

use crate::error::BridgeError;

pub use commands::{run_command, CommandOutput};
pub use config::{
    apply_override, load_config, CompareSection, ConvergeSection, Experiment, ExperimentConfig,
    ModelSpec, SamplerSection, ScheduleSpec, ValidateSection,
};
pub use output::{ResultRow, RunSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Run the theorem checks and write `theorem_report.csv`.
    Validate,
    /// Draw samples with the configured sampler and write `samples.csv`.
    Sample,
    /// Compare all samplers across a grid of step counts.
    Compare,
    /// Fit empirical convergence orders.
    Converge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Sample => "sample",
            Command::Compare => "compare",
            Command::Converge => "converge",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bridgesampler", version, about = "Diffusion bridge sampling experiments")]
pub struct Args {
    pub command: Command,
    /// TOML experiment file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config leaf, e.g. `--set sampler.steps=40`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerical(BridgeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Config(msg) => CliError::Config(msg),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Runs the parsed command end to end, writing into `args.out`. Failed
/// checks are reported through [`CommandOutput::failed_checks`].
pub fn execute(args: &Args) -> Result<CommandOutput, CliError> {
    let (experiment, hash) = load_config(&args.config, &args.overrides)?;
    let started = std::time::Instant::now();
    let mut out = run_command(args.command, &experiment)?;
    out.summary.config_sha256 = hash;
    out.summary
        .wall_time_seconds
        .insert("total".into(), started.elapsed().as_secs_f64());
    out.write_to(&args.out)?;
    Ok(out)
}

/// Parses `argv`, runs, prints the summary and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&args) {
        Ok(out) => {
            print!("{}", out.report);
            if out.failed_checks > 0 {
                eprintln!("{} check(s) failed", out.failed_checks);
                1
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
