//! Command-line driver for the cross-lingual check-worthiness benchmark.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::StudyConfig;

#[derive(Parser)]
#[command(
    name = "crosscheck",
    about = "Cross-lingual check-worthiness transfer benchmark",
    version
)]
struct Cli {
    /// Study configuration file (TOML).
    #[arg(long, global = true, default_value = "study.toml")]
    config: PathBuf,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Override the configured worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw TSVs, merge train+dev, down-sample, write canonical JSONL.
    PrepareData,
    /// Pre-translate the splits the manifests need and warm the cache.
    Translate {
        #[arg(long, value_enum, default_value = "both")]
        direction: commands::Direction,
    },
    /// Execute the study manifests and write per-manifest results.
    Run {
        /// Validate the manifests and print the plan without training.
        #[arg(long)]
        dry_run: bool,
        /// Override the seed list for every manifest (comma-separated).
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
    },
    /// Render grids, sweeps, and the comparison table from saved results.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let mut config = StudyConfig::load(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(output) = cli.output {
        config.output_dir = output;
    }
    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;

    match cli.command {
        Command::PrepareData => {
            commands::prepare_data(&config, &cli.config)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Translate { direction } => {
            commands::translate(&config, &cli.config, direction)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { dry_run, seed_list } => {
            let code = commands::run(&config, &cli.config, dry_run, seed_list, cli.workers)?;
            Ok(if code == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report => {
            commands::report(&config, &cli.config)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
