//! Command-line driver for the MMR pipeline: synthesize a cohort, preprocess
//! it, pretrain, embed with the frozen encoder, probe, and sweep ablations.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{read_strict, AblationGrid, RunConfig, SchemaError};

/// Exit status for a config that fails the schema.
pub const EXIT_SCHEMA: i32 = 2;
/// Exit status for any other failure.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mmr", version, about = "Masked multiscale reconstruction pretraining for PPG")]
pub struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,

    /// Override the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled cohort.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, normalize, resample and quality-gate segments.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a masked autoencoder and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode segments with a frozen checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cross-validated linear probes and embedding-space statistics.
    Probe {
        #[arg(long)]
        embeddings: PathBuf,
        /// Segment file carrying the labels.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain and probe over a grid of map and tokenizer settings.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let q = cli.quiet;
    match &cli.command {
        Command::Synth { config, out } => {
            commands::synth(&load(config, cli.seed)?, out)?;
        }
        Command::Preprocess { config, data, out } => {
            commands::preprocess(&load(config, cli.seed)?, data, out)?;
        }
        Command::Pretrain { config, data, out } => {
            commands::pretrain(&load(config, cli.seed)?, data, out, q)?;
        }
        Command::Embed {
            checkpoint,
            data,
            out,
            config,
        } => {
            let path = config.clone().unwrap_or_else(|| commands::sibling_config(checkpoint));
            commands::embed(&load(&path, cli.seed)?, checkpoint, data, out)?;
        }
        Command::Probe {
            embeddings,
            labels,
            config,
            out,
        } => {
            commands::probe(&load(config, cli.seed)?, embeddings, labels, out)?;
        }
        Command::Ablate {
            config,
            grid,
            data,
            out,
        } => {
            let g: AblationGrid = read_strict(grid)?;
            commands::ablate(&load(config, cli.seed)?, &g, data, out, q)?;
        }
    }
    Ok(())
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<SchemaError>().is_some() {
        EXIT_SCHEMA
    } else {
        EXIT_RUNTIME
    }
}

/// Worker-thread cap from `MMR_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("MMR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => anyhow::bail!("MMR_THREADS must be a positive integer, got `{v}`"),
        },
        Err(_) => Ok(None),
    }
}
