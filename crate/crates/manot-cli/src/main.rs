//! `manot`: train, evaluate, and apply optimal-transport maps on spheres
//! and flat tori.
//!
//! Exit codes: `0` success, `1` usage or input error, `2` training
//! aborted, `3` evaluation gated past the reliability threshold.

mod commands;
mod config;
mod util;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "manot", version, about = "Optimal transport on spheres and flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,

    /// Worker threads (default: MANOT_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a transport model and write its checkpoint.
    Train(CommonArgs),

    /// Evaluate a checkpoint: KL divergence, effective sample size,
    /// transport cost, and the Monge gap.
    Eval {
        #[command(flatten)]
        common: CommonArgs,

        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },

    /// Push points through a trained map, optionally stopping partway
    /// along the geodesic.
    Transport {
        #[command(flatten)]
        common: CommonArgs,

        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,

        /// CSV of input points (default: sample the configured source).
        #[arg(long)]
        points: Option<PathBuf>,

        /// Geodesic interpolation parameter in [0, 1].
        #[arg(long)]
        t: Option<f64>,
    },

    /// Landmark-embedding quality diagnostics across a landmark-count
    /// schedule.
    DiagnoseEmbedding(CommonArgs),

    /// Train and evaluate every (dimension, method, seed) grid cell.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,

        /// Keep finished cells from an existing table; retry failures.
        #[arg(long)]
        resume: bool,
    },

    /// Quantization-error table and decay slope for the target measure.
    Quantize(CommonArgs),
}

/// Thread count resolution: flag, then `MANOT_THREADS`, then rayon's
/// default. Returns the effective count after configuring the global pool.
fn init_threads(flag: Option<usize>) -> Result<usize> {
    let requested = flag.or_else(|| {
        std::env::var("MANOT_THREADS").ok().and_then(|s| s.parse().ok())
    });
    if let Some(n) = requested {
        if n == 0 {
            anyhow::bail!("thread count must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
        Ok(n)
    } else {
        Ok(rayon::current_num_threads())
    }
}

fn with_config<F>(common: &CommonArgs, f: F) -> Result<i32>
where
    F: FnOnce(&ExperimentConfig, &Path, usize) -> Result<i32>,
{
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.override_seed(seed);
    }
    let threads = init_threads(common.threads)?;
    f(&config, &common.out, threads)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(common) => {
            with_config(&common, |cfg, out, threads| commands::train(cfg, out, threads))
        }
        Command::Eval { common, checkpoint } => with_config(&common, |cfg, out, threads| {
            commands::eval(cfg, &checkpoint, out, threads)
        }),
        Command::Transport { common, checkpoint, points, t } => {
            with_config(&common, |cfg, out, threads| {
                commands::transport(cfg, &checkpoint, points.as_deref(), t, out, threads)
            })
        }
        Command::DiagnoseEmbedding(common) => {
            with_config(&common, |cfg, out, threads| {
                commands::diagnose_embedding(cfg, out, threads)
            })
        }
        Command::Sweep { common, resume } => with_config(&common, |cfg, out, threads| {
            commands::sweep(cfg, out, threads, resume)
        }),
        Command::Quantize(common) => {
            with_config(&common, |cfg, out, threads| commands::quantize(cfg, out, threads))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
