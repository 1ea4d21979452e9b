mod bench;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lsmc", version, about = "Multiperiod portfolio optimization by least squares Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a VAR(1) to a price CSV and write var_model.json.
    Calibrate {
        /// Close prices with a header row of tickers, oldest row first.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve the configured cell and write policy, diagnostics and timing JSON.
    Solve(RunArgs),
    /// Replay a solved policy and a uniform random baseline out of sample.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Policy file, `<out>/policy.json` by default.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Compare maximizers across meshes.
    BenchRegression(RunArgs),
    /// Sweep mesh against horizon, risk aversion and control dimension.
    BenchMesh(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Training seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Wall-clock limit per solve or sweep cell.
    #[arg(long)]
    budget_secs: Option<u64>,
    /// Run sweep cells concurrently. Per-cell timings then include contention.
    #[arg(long)]
    parallel: bool,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf, Option<u64>)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.validate().context("after applying --seed")?;
        }
        if self.budget_secs == Some(0) {
            bail!("--budget-secs must be at least 1");
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        let budget = self.budget_secs.or(cfg.sweep.budget_secs);
        Ok((cfg, out, budget))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { csv, out } => commands::calibrate(&csv, &out),
        Command::Solve(args) => {
            let (cfg, out, budget) = args.load()?;
            commands::solve(&cfg, &out, budget)
        }
        Command::Evaluate { run, policy } => {
            let (cfg, out, _) = run.load()?;
            commands::evaluate(&cfg, &out, policy)
        }
        Command::BenchRegression(args) => {
            let (cfg, out, budget) = args.load()?;
            bench::bench_regression(&cfg, &out, budget, args.parallel)
        }
        Command::BenchMesh(args) => {
            let (cfg, out, budget) = args.load()?;
            bench::bench_mesh(&cfg, &out, budget, args.parallel)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
