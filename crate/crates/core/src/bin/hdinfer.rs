use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hdinfer::experiment::{run_with_threads, ExperimentConfig};

/// Simultaneous inference and regularized GMM experiments.
#[derive(Parser)]
#[command(name = "hdinfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its tables.
    Run {
        config: PathBuf,
        /// Overrides the configuration seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; falls back to HDINFER_THREADS, then to all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; overrides the configuration's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let cfg = ExperimentConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let warnings = cfg
        .validate()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("HDINFER_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&k| k > 0)
            .map(Some)
            .ok_or_else(|| format!("HDINFER_THREADS must be a positive integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!(
                "{}: ok ({} replications)",
                config.display(),
                cfg.replications
            );
            Ok(())
        }
        Command::Run {
            config,
            seed,
            threads,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let threads = match threads {
                Some(0) => return Err("--threads must be positive".into()),
                Some(k) => Some(k),
                None => threads_from_env()?,
            };
            let dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("hdinfer-out"));
            let result = run_with_threads(&cfg, threads).map_err(|e| e.to_string())?;
            let files = result.write(&dir).map_err(|e| e.to_string())?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
