use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskbudget_cli::{cmd_backtest, cmd_gridsearch, cmd_simstudy, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "riskbudget",
    version,
    about = "End-to-end risk budgeting backtests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Backtest the configured strategies on one market.
    Backtest(Common),
    /// Repeat the backtest over a list of seeds and test the hypotheses.
    Simstudy(Common),
    /// Tune learning rate and step count on a train/validation split.
    Gridsearch(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Training seed (first seed of the sweep for `simstudy`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `run.out`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated strategy names, replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
}

fn load(args: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
        cfg.run.seeds = None;
    }
    if let Some(s) = &args.strategies {
        cfg.run.strategies = s.clone();
    }
    if let Some(out) = &args.out {
        cfg.run.out = out.clone();
    }
    cfg.validate()?;
    let out = cfg.run.out.clone();
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Backtest(a) => load(&a).and_then(|(c, o)| cmd_backtest(&c, &o)),
        Command::Simstudy(a) => load(&a).and_then(|(c, o)| cmd_simstudy(&c, &o)),
        Command::Gridsearch(a) => load(&a).and_then(|(c, o)| cmd_gridsearch(&c, &o)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
