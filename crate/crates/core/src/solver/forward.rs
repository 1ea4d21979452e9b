use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ProblemSpec;
use crate::cost::Rebalance;
use crate::error::{Error, Result};
use crate::grid::in_admissible_set;
use crate::market::{draw_admissible_control, simulate_paths, MarketPaths};
use crate::rng::{substream, Purpose};

/// Market paths plus the randomised controls, wealth and holdings they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub market: MarketPaths,
    controls: Vec<f64>,
    wealth: Vec<f64>,
    positions: Vec<f64>,
    pub floor_count: usize,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.market.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.market.n_steps
    }

    /// Randomised weights chosen at `t_n`, `n < N`.
    #[inline]
    pub fn controls(&self, m: usize, n: usize) -> &[f64] {
        let d = self.market.n_assets;
        let o = (m * self.market.n_steps + n) * d;
        &self.controls[o..o + d]
    }

    /// Randomised wealth at `t_n`, `n ≤ N`.
    #[inline]
    pub fn wealth(&self, m: usize, n: usize) -> f64 {
        self.wealth[m * (self.market.n_steps + 1) + n]
    }

    /// Units held entering `t_n`, before rebalancing. Zero at `t_0`.
    #[inline]
    pub fn prior_positions(&self, m: usize, n: usize) -> &[f64] {
        let d = self.market.n_assets;
        let o = (m * (self.market.n_steps + 1) + n) * d;
        &self.positions[o..o + d]
    }
}

/// Simulate the market and roll wealth under i.i.d. uniform controls on the
/// admissible set.
pub fn forward_simulate(spec: &ProblemSpec) -> Result<PathSet> {
    let d = spec.market.n_assets();
    forward_simulate_with(spec, |_, _, rng| draw_admissible_control(d, rng))
}

/// As [`forward_simulate`] with a caller-supplied control sampler
/// `(path, step, rng) -> weights`.
pub fn forward_simulate_with<F>(spec: &ProblemSpec, sampler: F) -> Result<PathSet>
where
    F: Fn(usize, usize, &mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    spec.validate()?;
    let m_paths = spec.n_paths;
    let n_steps = spec.horizon;
    let d = spec.market.n_assets();
    let market = simulate_paths(&spec.market, m_paths, n_steps, spec.seed)?;
    let floor = spec.wealth_floor();

    let per_path: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)>> = (0..m_paths)
        .into_par_iter()
        .map(|m| {
            let mut rng = substream(spec.seed, Purpose::Controls, m as u64);
            let mut controls = Vec::with_capacity(n_steps * d);
            let mut wealth = Vec::with_capacity(n_steps + 1);
            let mut positions = vec![0.0; (n_steps + 1) * d];
            let mut post = vec![0.0; d];
            let mut floors = 0;
            let mut w = spec.w0;
            wealth.push(w);
            for n in 0..n_steps {
                let alpha = sampler(m, n, &mut rng);
                if alpha.len() != d || !in_admissible_set(&alpha) {
                    return Err(Error::Input(format!(
                        "control {alpha:?} at path {m}, step {n} is not admissible"
                    )));
                }
                let (before, after) = positions.split_at_mut((n + 1) * d);
                let step = Rebalance {
                    wealth: w,
                    weights: &alpha,
                    prices: market.prices(m, n),
                    next_returns: market.returns(m, n + 1),
                    rf: spec.rf,
                    prev_positions: &before[n * d..],
                };
                let out = spec.costs.settle(&step, floor, &mut after[..d], &mut post);
                floors += out.floored as usize;
                w = out.wealth;
                wealth.push(w);
                controls.extend_from_slice(&alpha);
            }
            Ok((controls, wealth, positions, floors))
        })
        .collect();

    let mut controls = Vec::with_capacity(m_paths * n_steps * d);
    let mut wealth = Vec::with_capacity(m_paths * (n_steps + 1));
    let mut positions = Vec::with_capacity(m_paths * (n_steps + 1) * d);
    let mut floor_count = 0;
    for r in per_path {
        let (c, w, p, f) = r?;
        controls.extend(c);
        wealth.extend(w);
        positions.extend(p);
        floor_count += f;
    }
    Ok(PathSet {
        market,
        controls,
        wealth,
        positions,
        floor_count,
    })
}
