use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metrocast::config::ServiceConfig;
use metrocast::pipeline::{self, GenerateOptions};
use tracing_subscriber::EnvFilter;

/// Metro line arrival forecasting, simulation and what-if service.
#[derive(Parser)]
#[command(name = "metrocast", version)]
struct Cli {
    /// Service configuration (TOML, or JSON by extension). `TS_*` variables
    /// override its keys.
    #[arg(long, short, global = true, default_value = "metrocast.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and a matching config.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 31)]
        days: u32,
        #[arg(long, default_value_t = 1)]
        test_days: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        no_events: bool,
    },
    /// Cluster days, fit per-cluster models and destination shares.
    Fit,
    /// Start the HTTP service.
    Serve,
    /// Replay held-out days and write the accuracy report.
    Replay,
    /// Score the forecast records in a journal directory.
    Evaluate {
        /// Defaults to the configured data_dir.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    match cli.command {
        Command::Generate { out, days, test_days, seed, scale, no_events } => {
            let opts =
                GenerateOptions { days, test_days, seed, scale, events: !no_events, ..GenerateOptions::default() };
            let ds = pipeline::generate_dataset(&out, &opts)?;
            println!("{} taps, replay from {}; config at {}", ds.taps, ds.replay_from, ds.config_path.display());
        }
        Command::Fit => {
            let cfg = ServiceConfig::load(&cli.config)?;
            print!("{}", pipeline::fit_models(&cfg)?.render());
        }
        Command::Serve => {
            let cfg = ServiceConfig::load(&cli.config)?;
            tokio::runtime::Runtime::new()?.block_on(metrocast_server::serve(cfg))?;
        }
        Command::Replay => {
            let cfg = ServiceConfig::load(&cli.config)?;
            let out = pipeline::replay_dataset(&cfg)?;
            println!("{} cycles, {} joined forecasts\n", out.snapshots.len(), out.records.len());
            print!("{}", out.report.render());
        }
        Command::Evaluate { journal } => {
            let dir = match journal {
                Some(d) => d,
                None => ServiceConfig::load(&cli.config)?.data_dir,
            };
            let report = pipeline::evaluate_journal(&dir)?;
            if report.is_empty() {
                println!("no joined forecast records in {}", dir.display());
            } else {
                print!("{}", report.render());
            }
        }
    }
    Ok(())
}
