use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use lsmc_core::evaluation::{replay_policy, replay_rule, UniformRandomPolicy};
use lsmc_core::market::{calibrate_var, log_returns, read_price_csv};
use lsmc_core::solver::{solve_with, Policy, SolveOptions};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{csv_bytes, Outputs};

#[derive(Debug, Serialize)]
struct CalibrationReport {
    n_observations: usize,
    names: Vec<String>,
    stable: bool,
    stationary_mean: Option<Vec<f64>>,
    resid_sd: Vec<f64>,
}

pub fn calibrate(csv: &Path, out: &Path) -> Result<()> {
    let table = read_price_csv(csv).with_context(|| format!("reading {}", csv.display()))?;
    let returns = log_returns(&table);
    let model = calibrate_var(&returns, &table.names)?;
    let report = CalibrationReport {
        n_observations: returns.len(),
        names: table.names.clone(),
        stable: model.is_stable(),
        stationary_mean: model.stationary_mean(),
        resid_sd: (0..model.dim()).map(|i| model.resid_cov()[i][i].sqrt()).collect(),
    };
    let mut files = Outputs::default();
    files.add_json(out.join("var_model.json"), &model)?;
    files.add_json(out.join("calibration.json"), &report)?;
    files.commit()?;
    println!(
        "calibrated {} series on {} observations (stable: {})",
        model.dim(),
        report.n_observations,
        report.stable
    );
    for (name, sd) in report.names.iter().zip(&report.resid_sd) {
        println!("  {name}: residual sd {sd:.6}");
    }
    Ok(())
}

pub fn solve(cfg: &RunConfig, out: &Path, budget: Option<u64>) -> Result<()> {
    let market = cfg.load_market()?;
    let spec = cfg.base_problem(market.full()?);
    let opts = SolveOptions {
        deadline: budget.map(|b| Instant::now() + Duration::from_secs(b)),
    };
    let result = solve_with(&spec, &opts)?;
    let mut files = Outputs::default();
    files.add(out.join("policy.json"), (result.policy.to_json()? + "\n").into_bytes());
    files.add_json(out.join("diagnostics.json"), &result.diagnostics)?;
    files.add_json(out.join("timing.json"), &result.timings)?;
    files.commit()?;
    let d = &result.diagnostics;
    println!(
        "solved N={} mesh={} mode={}: in-sample CER {:.3} bp, initial weights {:?} in {:.2}s",
        spec.horizon, spec.mesh, spec.mode, d.cer_in_sample_bp, d.initial_allocation, result.timings.total_secs
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, out: &Path, policy_path: Option<PathBuf>) -> Result<()> {
    let market = cfg.load_market()?;
    let spec = cfg.base_problem(market.full()?);
    let path = policy_path.unwrap_or_else(|| out.join("policy.json"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let policy = Policy::from_json(&text).with_context(|| format!("loading {}", path.display()))?;
    if policy.spec_digest != spec.digest() {
        bail!("{} was solved for a different configuration", path.display());
    }
    let solved = replay_policy(&policy, &spec, cfg.eval_seed, cfg.eval_paths)?;
    let baseline = replay_rule(
        &UniformRandomPolicy { d: spec.market.n_assets() },
        &spec,
        cfg.eval_seed,
        cfg.eval_paths,
    )?;
    let reports = [solved, baseline];
    let rows: Vec<Vec<String>> = reports.iter().map(|r| r.csv_record()).collect();
    let mut files = Outputs::default();
    files.add_json(out.join("evaluation.json"), &reports)?;
    files.add(out.join("evaluation.csv"), csv_bytes(&reports[0].csv_header(), &rows)?);
    files.commit()?;
    for r in &reports {
        println!("{}: CER {:.3} bp (se {:.3})", r.label, r.cer_bp, r.cer_se_bp);
    }
    Ok(())
}
