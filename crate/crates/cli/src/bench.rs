//! Benchmark sweeps. Each cell solves, replays out of sample and is timed as
//! a whole; failures and budget breaches become `NA` rows.

use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::Result;
use lsmc_core::evaluation::replay_policy;
use lsmc_core::solver::{solve_with, MaximizerMode, SolveOptions};
use lsmc_core::Error;
use rayon::prelude::*;

use crate::config::{LoadedMarket, RunConfig};
use crate::output::{csv_bytes, Outputs};

const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub sweep: &'static str,
    pub mesh: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub d: usize,
    pub mode: MaximizerMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Budget,
    Failed(String),
}

impl Status {
    fn label(&self) -> String {
        match self {
            Status::Ok => "ok".into(),
            Status::Budget => "budget_exceeded".into(),
            Status::Failed(msg) => format!("failed: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub status: Status,
    pub cer_bp: f64,
    pub cer_se_bp: f64,
    pub solve_secs: f64,
    pub eval_secs: f64,
    /// Risky weights at the initial state.
    pub allocation: Vec<f64>,
}

impl CellResult {
    fn total_secs(&self) -> f64 {
        self.solve_secs + self.eval_secs
    }

    fn ok(&self) -> bool {
        self.status == Status::Ok
    }
}

fn run_cell(cfg: &RunConfig, market: &LoadedMarket, cell: Cell, budget: Option<u64>) -> CellResult {
    let start = Instant::now();
    let mut result = CellResult {
        cell,
        status: Status::Ok,
        cer_bp: f64::NAN,
        cer_se_bp: f64::NAN,
        solve_secs: f64::NAN,
        eval_secs: f64::NAN,
        allocation: Vec::new(),
    };
    let deadline = budget.map(|b| start + Duration::from_secs(b));
    let outcome = (|| -> lsmc_core::Result<()> {
        let m = market.with_assets(cell.d).map_err(|e| Error::Input(format!("{e:#}")))?;
        let spec = cfg.problem(m, cell.horizon, cell.gamma, cell.mesh, cell.mode);
        let solved = solve_with(&spec, &SolveOptions { deadline })?;
        result.solve_secs = start.elapsed().as_secs_f64();
        let t = Instant::now();
        let report = replay_policy(&solved.policy, &spec, cfg.eval_seed, cfg.eval_paths)?;
        result.eval_secs = t.elapsed().as_secs_f64();
        if deadline.is_some_and(|d| Instant::now() > d) {
            return Err(Error::BudgetExceeded {
                elapsed_secs: start.elapsed().as_secs_f64(),
            });
        }
        result.cer_bp = report.cer_bp;
        result.cer_se_bp = report.cer_se_bp;
        result.allocation = report.initial_allocation;
        Ok(())
    })();
    if let Err(e) = outcome {
        result.status = match e {
            Error::BudgetExceeded { .. } => Status::Budget,
            other => Status::Failed(other.to_string()),
        };
    }
    eprintln!(
        "cell {} mesh={} N={} gamma={} d={} mode={}: {}",
        cell.sweep,
        cell.mesh,
        cell.horizon,
        cell.gamma,
        cell.d,
        cell.mode,
        result.status.label()
    );
    result
}

fn run_cells(
    cfg: &RunConfig,
    market: &LoadedMarket,
    cells: &[Cell],
    budget: Option<u64>,
    parallel: bool,
) -> Vec<CellResult> {
    if parallel {
        cells.par_iter().map(|&c| run_cell(cfg, market, c, budget)).collect()
    } else {
        cells.iter().map(|&c| run_cell(cfg, market, c, budget)).collect()
    }
}

fn num(ok: bool, v: f64) -> String {
    if ok && v.is_finite() {
        v.to_string()
    } else {
        NA.into()
    }
}

/// `w_cash` then one column per configured asset; assets outside the cell are NA.
fn weight_columns(r: &CellResult, n_assets: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(n_assets + 1);
    if r.ok() {
        let cash = 1.0 - r.allocation.iter().sum::<f64>();
        cols.push(cash.max(0.0).to_string());
        cols.extend(r.allocation.iter().map(|a| a.to_string()));
    }
    cols.resize(n_assets + 1, NA.into());
    cols
}

fn weight_header(names: &[String]) -> Vec<String> {
    std::iter::once("w_cash".to_string())
        .chain(names.iter().map(|n| format!("w_{n}")))
        .collect()
}

pub fn regression_cells(cfg: &RunConfig, d: usize) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &mesh in &cfg.sweep.meshes {
        for &mode in &cfg.sweep.modes {
            cells.push(Cell {
                sweep: "regression",
                mesh,
                horizon: cfg.horizon,
                gamma: cfg.gamma,
                d,
                mode,
            });
        }
    }
    cells
}

pub fn regression_header(names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = [
        "mesh", "mode", "gamma", "horizon", "n_paths", "status", "cer_bp", "cer_se_bp",
        "solve_secs", "eval_secs", "total_secs", "runtime_ratio",
    ]
    .map(String::from)
    .to_vec();
    h.extend(weight_header(names));
    h
}

/// Runtime ratios are relative to the fastest completed cell at the same mesh.
pub fn regression_rows(cfg: &RunConfig, results: &[CellResult], n_assets: usize) -> Vec<Vec<String>> {
    results
        .iter()
        .map(|r| {
            let fastest = results
                .iter()
                .filter(|o| o.ok() && o.cell.mesh == r.cell.mesh)
                .map(CellResult::total_secs)
                .fold(f64::INFINITY, f64::min);
            let ok = r.ok();
            let mut row = vec![
                r.cell.mesh.to_string(),
                r.cell.mode.to_string(),
                r.cell.gamma.to_string(),
                r.cell.horizon.to_string(),
                cfg.n_paths.to_string(),
                r.status.label(),
                num(ok, r.cer_bp),
                num(ok, r.cer_se_bp),
                num(ok, r.solve_secs),
                num(ok, r.eval_secs),
                num(ok, r.total_secs()),
                num(ok, r.total_secs() / fastest),
            ];
            row.extend(weight_columns(r, n_assets));
            row
        })
        .collect()
}

pub fn bench_regression(cfg: &RunConfig, out: &Path, budget: Option<u64>, parallel: bool) -> Result<()> {
    let market = cfg.load_market()?;
    let names = market.full()?.asset_names();
    let cells = regression_cells(cfg, market.n_assets());
    let results = run_cells(cfg, &market, &cells, budget, parallel);
    let rows = regression_rows(cfg, &results, names.len());
    let mut files = Outputs::default();
    files.add(out.join("bench_regression.csv"), csv_bytes(&regression_header(&names), &rows)?);
    files.commit()?;
    println!("bench-regression: {} cells written to {}", rows.len(), out.join("bench_regression.csv").display());
    Ok(())
}

/// Mesh × horizon × risk aversion at full dimension, then mesh × dimension at
/// the configured horizon and risk aversion.
pub fn mesh_cells(cfg: &RunConfig, n_assets: usize) -> Vec<Cell> {
    let s = &cfg.sweep;
    let mut cells = Vec::new();
    for &mesh in &s.meshes {
        for &horizon in &s.horizons {
            for &gamma in &s.gammas {
                cells.push(Cell {
                    sweep: "horizon_gamma",
                    mesh,
                    horizon,
                    gamma,
                    d: n_assets,
                    mode: cfg.mode,
                });
            }
        }
    }
    let dims: Vec<usize> = if s.dims.is_empty() {
        (1..=n_assets).collect()
    } else {
        s.dims.clone()
    };
    for &d in &dims {
        for &mesh in &s.meshes {
            cells.push(Cell {
                sweep: "dimension",
                mesh,
                horizon: cfg.horizon,
                gamma: cfg.gamma,
                d,
                mode: cfg.mode,
            });
        }
    }
    cells
}

pub fn mesh_header(names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = [
        "sweep", "mesh", "horizon", "gamma", "d", "mode", "n_paths", "status", "cer_bp",
        "cer_se_bp", "solve_secs", "eval_secs", "total_secs",
    ]
    .map(String::from)
    .to_vec();
    h.extend(weight_header(names));
    h
}

pub fn mesh_rows(cfg: &RunConfig, results: &[CellResult], n_assets: usize) -> Vec<Vec<String>> {
    results
        .iter()
        .map(|r| {
            let ok = r.ok();
            let mut row = vec![
                r.cell.sweep.to_string(),
                r.cell.mesh.to_string(),
                r.cell.horizon.to_string(),
                r.cell.gamma.to_string(),
                r.cell.d.to_string(),
                r.cell.mode.to_string(),
                cfg.n_paths.to_string(),
                r.status.label(),
                num(ok, r.cer_bp),
                num(ok, r.cer_se_bp),
                num(ok, r.solve_secs),
                num(ok, r.eval_secs),
                num(ok, r.total_secs()),
            ];
            row.extend(weight_columns(r, n_assets));
            row
        })
        .collect()
}

pub fn bench_mesh(cfg: &RunConfig, out: &Path, budget: Option<u64>, parallel: bool) -> Result<()> {
    let market = cfg.load_market()?;
    let names = market.full()?.asset_names();
    let cells = mesh_cells(cfg, market.n_assets());
    let results = run_cells(cfg, &market, &cells, budget, parallel);
    let rows = mesh_rows(cfg, &results, names.len());
    let mut files = Outputs::default();
    files.add(out.join("bench_mesh.csv"), csv_bytes(&mesh_header(&names), &rows)?);
    files.commit()?;
    println!("bench-mesh: {} cells written to {}", rows.len(), out.join("bench_mesh.csv").display());
    Ok(())
}
