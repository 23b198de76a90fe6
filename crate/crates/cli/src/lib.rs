//! Command-line front end: data generation, training, evaluation, order
//! reduction sweeps and gradient checks.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lru_mor::mor::ReductionMethod;

use crate::commands::*;
use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "lru-mor", version, about = "Train deep LRU state-space models and reduce their state dimension")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config with optional [model], [train], [gen], [sweep] and [gradcheck] sections.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dataset directory containing train/ and test/.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Model JSON file.
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test split from a random teacher.
    GenData,
    /// Train a model on --data.
    Fit,
    /// Report test metrics of --checkpoint on --data.
    Eval,
    /// Reduce every layer of --checkpoint to --order states.
    Reduce {
        #[arg(long, value_parser = parse_method)]
        method: ReductionMethod,
        #[arg(long, value_name = "R")]
        order: usize,
    },
    /// Evaluate every order from n_x down to 0.
    Sweep {
        /// Repeat to select several; defaults to the [sweep] config.
        #[arg(long, value_parser = parse_method)]
        method: Vec<ReductionMethod>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
}

fn parse_method(s: &str) -> std::result::Result<ReductionMethod, String> {
    s.parse().map_err(|e: lru_mor::Error| e.to_string())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Fit => "fit",
            Command::Eval => "eval",
            Command::Reduce { .. } => "reduce",
            Command::Sweep { .. } => "sweep",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Run a parsed command line. `Ok(false)` means a check ran but failed.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<bool> {
    let c = &cli.common;
    let cfg = Config::load_or_default(c.config.as_deref())?;
    let out = c.out.clone().unwrap_or_else(|| default_out(cli.command.name()));
    let data = || c.data.as_deref().context("--data is required");
    let checkpoint = || c.checkpoint.as_deref().context("--checkpoint is required");
    match &cli.command {
        Command::GenData => {
            gen_data_cmd(&cfg, c.seed, &out, stdout)?;
        }
        Command::Fit => {
            fit_cmd(&cfg, data()?, c.seed, &out, stdout)?;
        }
        Command::Eval => {
            eval_cmd(checkpoint()?, data()?, c.out.as_deref(), stdout)?;
        }
        Command::Reduce { method, order } => {
            reduce_cmd(checkpoint()?, *method, *order, &out, stdout)?;
        }
        Command::Sweep { method } => {
            let methods = if method.is_empty() { &cfg.sweep.methods } else { method };
            sweep_cmd(checkpoint()?, data()?, methods, &out, stdout)?;
        }
        Command::Gradcheck => {
            return Ok(gradcheck_cmd(&cfg, c.seed, c.out.as_deref(), stdout)?.passed);
        }
    }
    Ok(true)
}
