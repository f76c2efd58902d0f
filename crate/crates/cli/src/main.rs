use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;
mod report;

use commands::Outcome;
use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{0}")]
    Core(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<bihar_core::Error> for CliError {
    fn from(e: bihar_core::Error) -> Self {
        CliError::Core(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "bihar", version, about = "Partial-data inverse problem experiments for the perturbed biharmonic operator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// parent directory; each run gets a fresh subdirectory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence and Green-formula residuals
    Forward(RunArgs),
    /// Exponential solutions and remainder scaling
    Cgo(RunArgs),
    /// Empirical Carleman constants over an h-sweep
    Carleman(RunArgs),
    /// Integral identities for a coefficient pair
    Identity(RunArgs),
    /// Compare the front-face boundary maps of a coefficient pair
    Distinguish(RunArgs),
}

fn finish<T: serde::Serialize>(
    name: &'static str,
    args: &RunArgs,
    cfg: &RunConfig,
    run: fn(&RunConfig) -> Result<Outcome<T>, CliError>,
) -> Result<bool, CliError> {
    let outcome = run(cfg)?;
    let dir = report::run_dir(&args.out, name, cfg.seed)?;
    let pass = report::write_run(&dir, name, cfg, &outcome.checks, outcome.results, &outcome.tables)?;
    for c in &outcome.checks {
        println!("{} {} = {:.4e} ({} {:?})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.relation, c.threshold);
    }
    println!("report: {}", dir.join("report.json").display());
    Ok(pass)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let args = match &cli.command {
        Command::Forward(a) | Command::Cgo(a) | Command::Carleman(a) | Command::Identity(a) | Command::Distinguish(a) => a,
    };
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    match &cli.command {
        Command::Forward(_) => finish("forward", args, &cfg, commands::forward),
        Command::Cgo(_) => finish("cgo", args, &cfg, commands::cgo),
        Command::Carleman(_) => finish("carleman", args, &cfg, commands::carleman),
        Command::Identity(_) => finish("identity", args, &cfg, commands::identity),
        Command::Distinguish(_) => finish("distinguish", args, &cfg, commands::distinguish),
    }
}

fn main() -> ExitCode {
    // clap's own exit code for usage errors is 2, which is reserved here for failed checks
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
