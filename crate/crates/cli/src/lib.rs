//! Command-line driver: simulate data, train, verify and export plot data.
//!
//! Every invocation writes into run directories under `--out`, one per run,
//! named `<command>-<run id prefix>`. Later commands find their inputs by
//! reading the manifests of earlier runs, matched on configuration and seed.

pub mod config;
pub mod data;
pub mod error;
pub mod manifest;
pub mod report;
pub mod simulate;
pub mod train;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::LabConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "rwlab", version, about = "Re-weighting of generated training samples: simulate, train, verify, report")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving the run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Run this seed only instead of the campaign seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write originals, generated pool and test set.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train on simulated data.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: train::Mode,
        /// Simulation runs to read; defaults to `--out`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many iterations, leaving a checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run verification checks on earlier runs.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        check: verify::Check,
        /// Runs to read; defaults to `--out`.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Export plot data from finished training runs.
    Report {
        /// Directory holding the training runs.
        #[arg(long)]
        runs: PathBuf,
        /// Defaults to `--runs`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn load(common: &Common) -> CliResult<LabConfig> {
    let cfg = LabConfig::load(common.config.as_deref(), std::env::vars())?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_dirs(dirs: &[PathBuf]) {
    for d in dirs {
        println!("{}", d.display());
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Simulate { common } => {
            let cfg = load(&common)?;
            print_dirs(&simulate::simulate(&cfg, &cfg.seeds(common.seed), &common.out)?);
        }
        Command::Train { common, mode, data, resume, stop_after } => {
            let cfg = load(&common)?;
            let req = train::TrainRequest {
                mode,
                data: data.as_deref().unwrap_or(&common.out),
                out: &common.out,
                seeds: cfg.seeds(common.seed),
                resume: resume.as_deref(),
                stop_after,
            };
            print_dirs(&train::train(&cfg, req)?);
        }
        Command::Verify { common, check, inputs } => {
            let cfg = load(&common)?;
            let inputs = inputs.as_deref().unwrap_or(&common.out);
            let (dir, pass) = verify::verify(&cfg, check, &cfg.seeds(common.seed), inputs, &common.out)?;
            print_dirs(&[dir.clone()]);
            if !pass {
                return Err(CliError::ChecksFailed(format!("checks failed; see {}", dir.join("summary.csv").display())));
            }
        }
        Command::Report { runs, out, .. } => {
            let out = out.unwrap_or_else(|| runs.clone());
            print_dirs(&[report::report(&runs, &out)?]);
        }
    }
    Ok(())
}

/// Runs the command on a pool of `--jobs` threads.
pub fn run(cli: Cli) -> CliResult<()> {
    let jobs = match &cli.command {
        Command::Simulate { common } | Command::Train { common, .. } | Command::Verify { common, .. } => common.jobs,
        Command::Report { jobs, .. } => *jobs,
    };
    if jobs == Some(0) {
        return Err(CliError::input("--jobs must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| dispatch(cli.command))
}
