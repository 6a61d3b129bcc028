use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use sparselab::cli::{self, EXIT_ERROR};

/// Sparse-regression laboratory: solvers, theory checks and Monte-Carlo runs.
#[derive(Parser)]
#[command(name = "sparselab", version)]
struct Args {
    /// Config file ([section] key=value lines)
    #[arg(long)]
    config: PathBuf,

    /// Override the master seed from the config
    #[arg(long)]
    seed: Option<u64>,

    /// Override the rayon thread count (0 = automatic)
    #[arg(long)]
    threads: Option<usize>,

    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", args.config.display());
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let mut config = match cli::parse_config(&text) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {}: {err}", args.config.display());
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    match cli::run(&config) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
