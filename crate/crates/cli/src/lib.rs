//! Command-line driver: configuration, sampler runs and figure artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod experiments;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use submcmc::{Error, Result};

use config::{ExperimentConfig, RawConfig};

#[derive(Debug, Parser)]
#[command(
    name = "submcmc",
    version,
    about = "Subsampling MCMC with control variates"
)]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides `output.dir` and the SUBMCMC_OUT variable).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of chains (overrides `chains`).
    #[arg(long, global = true, value_name = "K")]
    pub chains: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a Poisson regression dataset to data.csv.
    Simulate,
    /// Run the configured sampler and write traces and summaries.
    Run,
    /// Pilot-plan the subsample size m for the configured targets.
    Plan,
    /// Summaries (mean, sd, IACT, MCSE) of existing trace files.
    Diagnose {
        #[arg(required = true, value_name = "TRACE")]
        traces: Vec<PathBuf>,
    },
    /// Optimal sampling fractions over a grid of n.
    Figure1,
    /// Log-likelihood contributions against their control variates.
    Figure234,
    /// Chains over a ladder of log-likelihood estimator variances.
    Figure5,
}

impl Cli {
    /// The validated configuration after the file, `--set`, `--out` and
    /// `--chains` have been applied in that order.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        for assignment in &self.set {
            raw.assign(assignment)?;
        }
        if let Some(dir) = &self.out {
            raw.set("output.dir", &dir.to_string_lossy())?;
        }
        if let Some(k) = self.chains {
            raw.set("chains", &k.to_string())?;
        }
        ExperimentConfig::from_raw(raw)
    }
}

/// Runs the subcommand and returns the files written, relative to the
/// output directory.
pub fn execute(cli: &Cli) -> Result<Vec<String>> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Run => commands::run(&cfg),
        Command::Plan => commands::plan(&cfg),
        Command::Diagnose { traces } => commands::diagnose(&cfg, traces),
        Command::Figure1 => commands::figure1(&cfg),
        Command::Figure234 => commands::figure234(&cfg),
        Command::Figure5 => commands::figure5(&cfg),
    }
}

/// 2 for configuration errors, 3 for everything that fails at run time.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        _ => 3,
    }
}
