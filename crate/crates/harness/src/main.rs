use std::path::PathBuf;
use std::process::ExitCode;

use batchreg_harness::{commands, ExperimentConfig, HarnessError, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "batchreg", version, about = "List-decodable linear regression from batches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides `problem.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trials per grid cell; overrides `trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Use the deterministic filter in list-decodable mean estimation.
    #[arg(long)]
    deterministic_filter: bool,
}

#[derive(Args, Clone)]
struct WithDataset {
    #[command(flatten)]
    common: Common,
    /// Dataset written by `generate`; the live generator is used when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset for the config's problem.
    Generate(Common),
    /// List-decode and report min-list error and list size.
    Run(WithDataset),
    /// Grid over n, alpha, k, m and d; writes sweep.csv.
    Sweep(Common),
    /// Marcinkiewicz-Zygmund suites.
    MzCheck(Common),
    /// Certificate soundness and sandwich suite.
    CertCheck(Common),
    /// Pruning survival and separation suite.
    PruneCheck(Common),
    /// Group size-1 batches into larger ones and list-decode.
    Reduce(WithDataset),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    cfg.apply_overrides(c.seed, c.trials, c.out.clone(), c.deterministic_filter);
    cfg.validate()?;
    Ok(cfg)
}

fn print<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("report serializes"));
}

fn verdict(passed: bool, what: &str) -> Result<()> {
    if passed {
        Ok(())
    } else {
        Err(HarnessError::Invariant(format!("{what} failed")))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let path = commands::generate(&load(&c)?)?;
            println!("{}", path.display());
        }
        Command::Run(w) => print(&commands::run(&load(&w.common)?, w.dataset.as_deref())?),
        Command::Sweep(c) => {
            let (rows, summary) = commands::sweep(&load(&c)?)?;
            eprintln!("{} rows", rows.len());
            print(&summary);
        }
        Command::MzCheck(c) => {
            let r = commands::mz_check(&load(&c)?)?;
            print(&r);
            verdict(r.passed, "mz-check")?;
        }
        Command::CertCheck(c) => {
            let r = commands::cert_check(&load(&c)?)?;
            print(&r);
            verdict(r.passed, "cert-check")?;
        }
        Command::PruneCheck(c) => {
            let r = commands::prune_check(&load(&c)?)?;
            print(&r);
            verdict(r.passed, "prune-check")?;
        }
        Command::Reduce(w) => print(&commands::reduce(&load(&w.common)?, w.dataset.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
