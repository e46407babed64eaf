//! `sml`: run, replay and inspect social machine learning experiments.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
//! divergence, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sml_core::config::ExperimentConfig;
use sml_core::experiment;

#[derive(Parser)]
#[command(name = "sml", version, about = "Social machine learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file (or the built-in default).
    Run {
        /// TOML experiment config; omit for the built-in networked-MNIST
        /// default.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker thread count; artifacts do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-run a finished experiment from its snapshot, byte for byte.
    Replay {
        /// Directory of the finished run (holds config_snapshot.toml).
        run_dir: PathBuf,
        /// Where to write the replayed artifacts.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute the bound report from a finished run's checkpoints.
    Bounds {
        /// Directory of the finished run.
        run_dir: PathBuf,
    },
    /// Print the resolved configuration.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(
    config: Option<&PathBuf>,
    seed: Option<u64>,
    out: Option<&PathBuf>,
) -> sml_core::Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::paper_default(),
    };
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = out {
        cfg.run.out_dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn run() -> sml_core::Result<()> {
    match Cli::parse().command {
        Command::Run { config, seed, out, workers } => {
            let cfg = load_config(config.as_ref(), seed, out.as_ref())?;
            let artifacts = experiment::run_experiment(&cfg, workers)?;
            println!("run complete: {}", artifacts.out_dir.display());
            println!("  seed: {}", artifacts.summary.seed);
            println!("  config hash: {}", artifacts.summary.config_sha256);
            for (a, (sml, solo)) in artifacts
                .summary
                .sml_accuracy
                .iter()
                .zip(&artifacts.summary.standalone_accuracy)
                .enumerate()
            {
                println!("  agent {a}: sml accuracy {sml:.4}, standalone {solo:.4}");
            }
            println!(
                "  consistency condition: {}",
                if artifacts.summary.consistency.holds { "holds" } else { "fails" }
            );
            Ok(())
        }
        Command::Replay { run_dir, out, workers } => {
            let artifacts = experiment::replay(&run_dir, &out, workers)?;
            println!("replayed into {}", artifacts.out_dir.display());
            Ok(())
        }
        Command::Bounds { run_dir } => {
            let report = experiment::bounds_from_run(&run_dir)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Inspect { config, seed, out } => {
            let cfg = load_config(config.as_ref(), seed, out.as_ref())?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
