use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use seedbank_core::suite;

mod config;
mod experiments;

/// Simulation experiments for the stochastic F-KPP equation with seed bank
/// and its dual particle system.
#[derive(Parser)]
#[command(name = "seedbank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads for replicate loops (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a packaged acceptance suite: `quick`, `full`, or a criterion
    /// number such as `7`.
    Check {
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

const EXIT_ERROR: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn run(config: PathBuf, seed: Option<u64>, output_dir: Option<PathBuf>, threads: Option<usize>) -> Result<ExitCode> {
    set_threads(threads)?;
    let mut cfg = config::parse_config(&config).with_context(|| format!("invalid config {}", config.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let outcome = experiments::run_experiment(&cfg)?;
    println!("{} finished, output in {}", cfg.experiment, cfg.output_dir.display());
    for (k, v) in &outcome.metrics {
        println!("  {k} = {v}");
    }
    Ok(match outcome.verdict {
        Some(false) => {
            println!("check failed");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        _ => ExitCode::SUCCESS,
    })
}

fn check(name: &str, seed: Option<u64>, threads: Option<usize>) -> Result<ExitCode> {
    set_threads(threads)?;
    let ids = suite::resolve(name).with_context(|| format!("unknown suite `{name}`; use quick, full or 1-12"))?;
    let seed = seed.unwrap_or(suite::SUITE_SEED);
    let (mut failed, mut errors) = (0, 0);
    for id in ids {
        match suite::run(id, seed) {
            Ok(outcome) => {
                failed += usize::from(!outcome.pass);
                println!("{}", outcome.line());
            }
            Err(e) => {
                errors += 1;
                println!("[FAIL] {id:>2}. {}: error: {e}", suite::name(id));
            }
        }
    }
    Ok(if errors > 0 {
        ExitCode::from(EXIT_ERROR)
    } else if failed > 0 {
        ExitCode::from(EXIT_CHECK_FAILED)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, output_dir, threads } => run(config, seed, output_dir, threads),
        Command::Check { suite, seed, threads } => check(&suite, seed, threads),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_ERROR)
    })
}
