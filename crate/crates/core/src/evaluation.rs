//! Utility, certainty-equivalent return and out-of-sample policy replay.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::Rebalance;
use crate::error::{Error, Result};
use crate::grid::in_admissible_set;
use crate::market::{draw_admissible_control, simulate_paths};
use crate::rng::{substream, Purpose};
use crate::solver::{Controller, Policy, ProblemSpec};

/// CRRA utility `w^{1−γ}/(1−γ)`, or `ln w` when `log_utility` is set (with `γ = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub gamma: f64,
    #[serde(default)]
    pub log_utility: bool,
}

impl UtilitySpec {
    pub fn crra(gamma: f64) -> Self {
        UtilitySpec {
            gamma,
            log_utility: false,
        }
    }

    pub fn log() -> Self {
        UtilitySpec {
            gamma: 1.0,
            log_utility: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("risk aversion {} must be positive", self.gamma)));
        }
        match (self.log_utility, self.gamma == 1.0) {
            (false, true) => Err(Error::Config(
                "gamma = 1 requires log utility to be enabled".into(),
            )),
            (true, false) => Err(Error::Config("log utility requires gamma = 1".into())),
            _ => Ok(()),
        }
    }

    /// Utility of a positive wealth. No domain check.
    #[inline]
    pub fn value(&self, w: f64) -> f64 {
        if self.log_utility {
            w.ln()
        } else {
            let e = 1.0 - self.gamma;
            w.powf(e) / e
        }
    }

    pub fn inverse(&self, u: f64) -> f64 {
        if self.log_utility {
            u.exp()
        } else {
            let e = 1.0 - self.gamma;
            (e * u).powf(1.0 / e)
        }
    }

    /// `U'(w) = w^{−γ}`.
    pub fn marginal(&self, w: f64) -> f64 {
        w.powf(-self.gamma)
    }
}

pub fn crra_utility(w: f64, gamma: f64) -> Result<f64> {
    let u = UtilitySpec::crra(gamma);
    u.validate()?;
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::Domain(format!("utility undefined at wealth {w}")));
    }
    Ok(u.value(w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CerEstimate {
    pub cer_bp: f64,
    /// Delta-method standard error.
    pub se_bp: f64,
}

/// Certainty-equivalent return in basis points per period of terminal
/// wealths normalised by initial wealth.
pub fn cer(terminal_wealths: &[f64], gamma: f64, periods: usize) -> Result<f64> {
    let u = UtilitySpec::crra(gamma);
    u.validate()?;
    Ok(cer_estimate(terminal_wealths, u, periods)?.cer_bp)
}

pub fn cer_estimate(wealths: &[f64], utility: UtilitySpec, periods: usize) -> Result<CerEstimate> {
    if wealths.is_empty() {
        return Err(Error::Usage("certainty equivalent of an empty sample".into()));
    }
    if periods == 0 {
        return Err(Error::Usage("certainty equivalent over zero periods".into()));
    }
    if let Some(w) = wealths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Domain(format!("terminal wealth {w} is not positive")));
    }
    let n = wealths.len() as f64;
    let utils: Vec<f64> = wealths.iter().map(|&w| utility.value(w)).collect();
    let mean = utils.iter().sum::<f64>() / n;
    let var = if wealths.len() > 1 {
        utils.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let ce = utility.inverse(mean);
    let t = periods as f64;
    let cer_bp = 1e4 * (ce.powf(1.0 / t) - 1.0);
    let dce = (var / n).sqrt() / utility.marginal(ce);
    let se_bp = 1e4 / t * ce.powf(1.0 / t - 1.0) * dce;
    Ok(CerEstimate { cer_bp, se_bp })
}

/// A rule choosing weights from the step, predictor state and wealth.
pub trait ControlRule: Sync {
    fn label(&self) -> String;

    fn control(&self, n: usize, z: &[f64], w: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    /// Weights chosen at the initial state.
    fn initial_allocation(&self, z0: &[f64], w0: f64) -> Result<Vec<f64>> {
        let mut rng = substream(0, Purpose::Scratch, 0);
        self.control(0, z0, w0, &mut rng)
    }
}

impl ControlRule for Controller<'_> {
    fn label(&self) -> String {
        self.mode().to_string()
    }

    fn control(&self, n: usize, z: &[f64], w: f64, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.choose(n, z, w)?.alpha)
    }
}

/// Weights drawn uniformly on the admissible set at every step.
#[derive(Debug, Clone, Copy)]
pub struct UniformRandomPolicy {
    pub d: usize,
}

impl ControlRule for UniformRandomPolicy {
    fn label(&self) -> String {
        "uniform_random".into()
    }

    fn control(&self, _n: usize, _z: &[f64], _w: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(draw_admissible_control(self.d, rng))
    }

    /// The mean allocation.
    fn initial_allocation(&self, _z0: &[f64], _w0: f64) -> Result<Vec<f64>> {
        Ok(vec![1.0 / (self.d as f64 + 1.0); self.d])
    }
}

/// The same weights at every step.
#[derive(Debug, Clone)]
pub struct ConstantWeights(pub Vec<f64>);

impl ControlRule for ConstantWeights {
    fn label(&self) -> String {
        "constant".into()
    }

    fn control(&self, _n: usize, _z: &[f64], _w: f64, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub gamma: f64,
    pub horizon: usize,
    pub n_eval_paths: usize,
    pub seed: u64,
    /// Basis points per period.
    pub cer_bp: f64,
    pub cer_se_bp: f64,
    pub mean_wealth: f64,
    pub std_wealth: f64,
    pub floor_count: usize,
    pub asset_names: Vec<String>,
    /// Risky weights chosen at the initial state; cash takes the remainder.
    pub initial_allocation: Vec<f64>,
}

impl EvalReport {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "label",
            "gamma",
            "horizon",
            "n_eval_paths",
            "seed",
            "cer_bp",
            "cer_se_bp",
            "mean_wealth",
            "std_wealth",
            "floor_count",
            "w_cash",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(self.asset_names.iter().map(|a| format!("w_{a}")));
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let cash = 1.0 - self.initial_allocation.iter().sum::<f64>();
        let mut r = vec![
            self.label.clone(),
            self.gamma.to_string(),
            self.horizon.to_string(),
            self.n_eval_paths.to_string(),
            self.seed.to_string(),
            self.cer_bp.to_string(),
            self.cer_se_bp.to_string(),
            self.mean_wealth.to_string(),
            self.std_wealth.to_string(),
            self.floor_count.to_string(),
            cash.max(0.0).to_string(),
        ];
        r.extend(self.initial_allocation.iter().map(|a| a.to_string()));
        r
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.csv_header())?;
        w.write_record(self.csv_record())?;
        w.flush()?;
        Ok(())
    }
}

/// Replay a solved policy on fresh paths drawn from `eval_seed`.
pub fn replay_policy(
    policy: &Policy,
    spec: &ProblemSpec,
    eval_seed: u64,
    n_eval_paths: usize,
) -> Result<EvalReport> {
    let dz = spec.market.dim_z();
    if policy.horizon() != spec.horizon
        || policy.grid.d != spec.market.n_assets()
        || policy.asset_names != spec.market.asset_names()
        || policy.steps.iter().any(|s| s.feature_map.dim_in() != dz + 1)
    {
        return Err(Error::Usage(
            "policy does not match the problem's horizon, assets or state".into(),
        ));
    }
    let controller = policy.controller()?;
    replay_rule(&controller, spec, eval_seed, n_eval_paths)
}

/// Roll wealth forward under `rule` on fresh paths and score the terminal wealths.
pub fn replay_rule(
    rule: &dyn ControlRule,
    spec: &ProblemSpec,
    eval_seed: u64,
    n_eval_paths: usize,
) -> Result<EvalReport> {
    spec.validate()?;
    if eval_seed == spec.seed {
        return Err(Error::Usage(format!(
            "evaluation seed {eval_seed} must differ from the training seed"
        )));
    }
    if n_eval_paths == 0 {
        return Err(Error::Usage("at least one evaluation path is required".into()));
    }
    let n_steps = spec.horizon;
    let d = spec.market.n_assets();
    let market = simulate_paths(&spec.market, n_eval_paths, n_steps, eval_seed)?;
    let floor = spec.wealth_floor();
    let outcomes: Vec<Result<(f64, usize)>> = (0..n_eval_paths)
        .into_par_iter()
        .map(|m| {
            let mut rng = substream(eval_seed, Purpose::RandomPolicy, m as u64);
            let mut w = spec.w0;
            let mut prev = vec![0.0; d];
            let mut next = vec![0.0; d];
            let mut post = vec![0.0; d];
            let mut floors = 0;
            for n in 0..n_steps {
                let alpha = rule.control(n, market.predictors(m, n), w, &mut rng)?;
                if alpha.len() != d || !in_admissible_set(&alpha) {
                    return Err(Error::Domain(format!("rule emitted inadmissible weights {alpha:?}")));
                }
                let step = Rebalance {
                    wealth: w,
                    weights: &alpha,
                    prices: market.prices(m, n),
                    next_returns: market.returns(m, n + 1),
                    rf: spec.rf,
                    prev_positions: &prev,
                };
                let out = spec.costs.settle(&step, floor, &mut next, &mut post);
                floors += out.floored as usize;
                w = out.wealth;
                std::mem::swap(&mut prev, &mut next);
            }
            Ok((w, floors))
        })
        .collect();
    let mut wealths = Vec::with_capacity(n_eval_paths);
    let mut floor_count = 0;
    for o in outcomes {
        let (w, f) = o?;
        wealths.push(w / spec.w0);
        floor_count += f;
    }
    let est = cer_estimate(&wealths, spec.utility, n_steps)?;
    let n = wealths.len() as f64;
    let mean = wealths.iter().sum::<f64>() / n;
    let var = if wealths.len() > 1 {
        wealths.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let initial_allocation = rule.initial_allocation(&spec.market.z0, spec.w0)?;
    Ok(EvalReport {
        label: rule.label(),
        gamma: spec.utility.gamma,
        horizon: n_steps,
        n_eval_paths,
        seed: eval_seed,
        cer_bp: est.cer_bp,
        cer_se_bp: est.se_bp,
        mean_wealth: mean * spec.w0,
        std_wealth: var.sqrt() * spec.w0,
        floor_count,
        asset_names: spec.market.asset_names(),
        initial_allocation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crra_values() {
        assert!((crra_utility(1.0, 10.0).unwrap() + 1.0 / 9.0).abs() < 1e-15);
        assert!((crra_utility(1.0, 5.0).unwrap() + 0.25).abs() < 1e-15);
        for g in [5.0, 10.0, 15.0] {
            assert!(crra_utility(1.1, g).unwrap() > crra_utility(1.0, g).unwrap());
        }
        assert!(crra_utility(0.0, 5.0).is_err());
        assert!(crra_utility(-1.0, 5.0).is_err());
        assert!(crra_utility(1.0, 1.0).is_err());
        assert!(crra_utility(1.0, 0.0).is_err());
        assert!(UtilitySpec::log().validate().is_ok());
        assert_eq!(UtilitySpec::log().value(1.0), 0.0);
    }

    #[test]
    fn cer_degenerate_samples() {
        for g in [2.0, 5.0, 10.0, 15.0] {
            for t in [1, 3, 12] {
                let w = vec![1.005f64.powi(t as i32); 10];
                assert!((cer(&w, g, t).unwrap() - 50.0).abs() < 1e-9);
                assert!(cer(&[1.0; 4], g, t).unwrap().abs() < 1e-12);
            }
        }
        assert!(cer(&[], 10.0, 1).is_err());
        assert!(cer(&[1.0, 0.0], 10.0, 1).is_err());
    }

    #[test]
    fn cer_two_point_sample() {
        // E[U] = −(0.9^−9 + 1.1^−9)/18, so U⁻¹ = ((0.9^−9 + 1.1^−9)/2)^(−1/9)
        let ce = ((0.9f64.powi(-9) + 1.1f64.powi(-9)) / 2.0).powf(-1.0 / 9.0);
        let expected = (ce - 1.0) * 1e4;
        assert!((cer(&[0.9, 1.1], 10.0, 1).unwrap() - expected).abs() < 1e-9);
        assert!(expected < 0.0);
    }

    #[test]
    fn cer_penalises_spread() {
        for g in [2.0, 5.0, 10.0] {
            let tight = [0.98, 1.02, 1.0, 1.0];
            let wide = [0.9, 1.1, 1.0, 1.0];
            assert!(cer(&wide, g, 2).unwrap() < cer(&tight, g, 2).unwrap());
        }
    }

    #[test]
    fn standard_error_vanishes_for_constant_sample() {
        let e = cer_estimate(&[1.01; 20], UtilitySpec::crra(5.0), 1).unwrap();
        assert!(e.se_bp < 1e-9);
        let e = cer_estimate(&[0.95, 1.05, 1.0, 1.02], UtilitySpec::crra(5.0), 1).unwrap();
        assert!(e.se_bp > 0.0);
    }
}
