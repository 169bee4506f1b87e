use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdedisc_cli::commands::{generate_data, run_discover, run_predict, run_report, PredictRequest};
use pdedisc_cli::config::RunConfig;
use pdedisc_cli::CliError;

#[derive(Parser)]
#[command(name = "pdedisc", version, about = "Discover PDE structure from space-time measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output / run directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write training and test CSVs plus a manifest.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Train every operator combination and rank them by AIC.
    Discover {
        #[command(flatten)]
        common: Common,
        /// Combinations trained concurrently.
        #[arg(long)]
        parallel: Option<usize>,
        /// Reuse finished combinations already in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Export solution-network predictions from a run directory.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Solution checkpoint (default: the run's winner).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Grid size as NX,NT.
        #[arg(long, default_value = "100,100", value_parser = parse_grid)]
        grid: (usize, usize),
        /// Extra query points (x,t,u CSV; u ignored).
        #[arg(long)]
        points: Option<PathBuf>,
        /// Snapshot times.
        #[arg(long, value_delimiter = ',', default_value = "3,7")]
        snapshots: Vec<f64>,
    },
    /// Rebuild the report files of a run directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected NX,NT")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_dir(common: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf, CliError> {
    common
        .out
        .clone()
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .ok_or_else(|| CliError::Config("--out or --config is required".into()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateData { common } => {
            let cfg = load_config(&common)?;
            let out = run_dir(&common, Some(&cfg))?;
            let m = generate_data(&cfg, &out)?;
            println!("wrote {} training and {} test rows to {}", m.train_rows, m.test_rows, out.display());
        }
        Command::Discover { common, parallel, resume } => {
            let cfg = load_config(&common)?;
            let out = run_dir(&common, Some(&cfg))?;
            let report = run_discover(&cfg, &out, parallel.unwrap_or(cfg.selection.parallel), resume)?;
            let w = report.winner();
            println!("winner: {} (aic {:e})", w.combination.label(), w.aic);
            for f in &report.failed {
                eprintln!("aborted {}: {}", f.label, f.message);
            }
        }
        Command::Predict {
            common,
            checkpoint,
            grid,
            points,
            snapshots,
        } => {
            let cfg = common.config.as_ref().map(|_| load_config(&common)).transpose()?;
            let out = run_dir(&common, cfg.as_ref())?;
            let req = PredictRequest {
                checkpoint,
                grid,
                points,
                snapshots,
            };
            for p in run_predict(&out, &req)? {
                println!("{}", p.display());
            }
        }
        Command::Report { common } => {
            let cfg = common.config.as_ref().map(|_| load_config(&common)).transpose()?;
            let out = run_dir(&common, cfg.as_ref())?;
            let report = run_report(&out)?;
            println!("winner: {} ({} candidates)", report.winner().combination.label(), report.ranked.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
