//! `moboa`: run candidate-set Bayesian optimization campaigns and inspect
//! their outputs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod coverage;
mod svg;

/// Exit code 2 for usage/config problems, 1 for runtime failures.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "moboa", version, about = "Multi-objective Bayesian optimization over finite candidate sets")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CampaignArgs {
    /// TOML campaign config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Config overrides, e.g. `optimizer.alpha=0.99`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds; replaces campaign.seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Seed used when the config lists none.
    #[arg(long, env = "MOBOA_SEED")]
    default_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the arms declared in a campaign config.
    Run(CampaignArgs),
    /// Run paired annealing and baseline arms and summarize the gap.
    Compare(CampaignArgs),
    /// Objective histograms and final-front scatter data from a result dir.
    Coverage {
        result_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact hypervolume of a CSV front (maximization orientation).
    Hv {
        front_csv: PathBuf,
        /// Comma-separated reference point.
        #[arg(long, allow_hyphen_values = true)]
        reference: String,
    },
    /// Micro-benchmarks of hypervolume and acquisition throughput.
    Bench {
        /// Timed repetitions per case.
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run(a) => commands::run(&a.config, &a.out, &a.overrides, a.seeds.as_deref(), a.default_seed, false),
        Command::Compare(a) => commands::run(&a.config, &a.out, &a.overrides, a.seeds.as_deref(), a.default_seed, true),
        Command::Coverage { result_dir, out } => coverage::run(&result_dir, &out),
        Command::Hv { front_csv, reference } => commands::hv(&front_csv, &reference),
        Command::Bench { reps } => commands::bench(reps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
