//! Offline/online driver around `euq-core`.

pub mod cache;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_tau_list, RunConfig};
use crate::error::CliError;
use crate::pipeline::RunStats;

#[derive(Debug, Parser)]
#[command(name = "euq", version, about = "Epistemic uncertainty surrogates for stochastic PDE models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the KL basis, the gPC expansion and the DD reductions.
    Offline(CommonArgs),
    /// Evaluate surrogates for each tau; validates against the model if configured.
    Online(CommonArgs),
    /// Monte Carlo moments of the model for each tau.
    Mc(CommonArgs),
    /// Surrogate moment sweep over tau from offline artifacts.
    Sweep(CommonArgs),
    /// Rewrite the summary from existing artifacts.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed (overrides `mc.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated tau values (overrides `stochastic.taus`); may be empty.
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<String>,
    /// Do not read or write the evaluation cache.
    #[arg(long)]
    pub no_cache: bool,
}

impl CommonArgs {
    /// Configuration with command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.mc.seed = seed;
        }
        if let Some(taus) = &self.tau {
            cfg.stochastic.taus = parse_tau_list(taus)?;
        }
        if self.no_cache {
            cfg.cache = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<RunStats, CliError> {
    match &cli.command {
        Command::Offline(a) => pipeline::run_offline(&a.resolve()?),
        Command::Online(a) => pipeline::run_online(&a.resolve()?),
        Command::Mc(a) => pipeline::run_mc(&a.resolve()?),
        Command::Sweep(a) => pipeline::run_sweep(&a.resolve()?),
        Command::Report(a) => pipeline::run_report(&a.resolve()?),
    }
}
