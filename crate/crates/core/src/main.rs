use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use levelset::cli::{parse_config, run, EXIT_ERROR};

/// Run one level-set experiment described by a TOML configuration.
#[derive(Debug, Parser)]
#[command(name = "levelset", version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    match run(&cfg, &out, threads) {
        Ok(outcome) => {
            for w in &outcome.manifest.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(e) = &outcome.manifest.error {
                eprintln!("error: {e}");
            }
            eprintln!("wrote {}", out.join("manifest.json").display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
