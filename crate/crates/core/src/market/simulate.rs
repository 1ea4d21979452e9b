use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::VarModel;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// A VAR model together with which of its series are tradable assets.
///
/// The full VAR state is the predictor vector; the series listed in `assets`
/// are additionally the log-returns of the risky assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketSpecDoc")]
pub struct MarketSpec {
    pub model: VarModel,
    pub assets: Vec<usize>,
    pub s0: Vec<f64>,
    /// Predictor state at `t_0`.
    pub z0: Vec<f64>,
}

/// Serialized form; a missing `z0` means the stationary mean.
#[derive(Debug, Clone, Deserialize)]
pub struct MarketSpecDoc {
    pub model: VarModel,
    pub assets: Vec<usize>,
    pub s0: Vec<f64>,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
}

impl TryFrom<MarketSpecDoc> for MarketSpec {
    type Error = Error;

    fn try_from(doc: MarketSpecDoc) -> Result<Self> {
        match doc.z0 {
            Some(z0) => MarketSpec::with_initial_state(doc.model, doc.assets, doc.s0, z0),
            None => MarketSpec::new(doc.model, doc.assets, doc.s0),
        }
    }
}

impl MarketSpec {
    /// Starts the predictors at the stationary mean (zero if none exists).
    pub fn new(model: VarModel, assets: Vec<usize>, s0: Vec<f64>) -> Result<Self> {
        let z0 = model
            .stationary_mean()
            .filter(|mu| mu.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| vec![0.0; model.dim()]);
        Self::with_initial_state(model, assets, s0, z0)
    }

    pub fn with_initial_state(
        model: VarModel,
        assets: Vec<usize>,
        s0: Vec<f64>,
        z0: Vec<f64>,
    ) -> Result<Self> {
        if assets.is_empty() {
            return Err(Error::Input("at least one tradable asset is required".into()));
        }
        if let Some(&a) = assets.iter().find(|&&a| a >= model.dim()) {
            return Err(Error::Input(format!(
                "asset index {a} out of range for a {}-series model",
                model.dim()
            )));
        }
        let mut seen = assets.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != assets.len() {
            return Err(Error::Input("asset indices must be distinct".into()));
        }
        if s0.len() != assets.len() || s0.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Input(
                "initial prices must be strictly positive, one per asset".into(),
            ));
        }
        if z0.len() != model.dim() || z0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("initial predictor state has the wrong shape".into()));
        }
        Ok(MarketSpec {
            model,
            assets,
            s0,
            z0,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn dim_z(&self) -> usize {
        self.model.dim()
    }

    pub fn asset_names(&self) -> Vec<String> {
        self.assets
            .iter()
            .map(|&i| self.model.names()[i].clone())
            .collect()
    }
}

/// Simulated predictors, simple returns and prices, stored path-major.
///
/// Index `n` runs over `0..=n_steps`; `returns[n]` is the return realised
/// over `(t_{n-1}, t_n]`, so `prices[n + 1] = prices[n] · (1 + returns[n + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPaths {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim_z: usize,
    pub n_assets: usize,
    predictors: Vec<f64>,
    returns: Vec<f64>,
    prices: Vec<f64>,
}

impl MarketPaths {
    #[inline]
    pub fn predictors(&self, m: usize, n: usize) -> &[f64] {
        let o = (m * (self.n_steps + 1) + n) * self.dim_z;
        &self.predictors[o..o + self.dim_z]
    }

    #[inline]
    pub fn returns(&self, m: usize, n: usize) -> &[f64] {
        let o = (m * (self.n_steps + 1) + n) * self.n_assets;
        &self.returns[o..o + self.n_assets]
    }

    #[inline]
    pub fn prices(&self, m: usize, n: usize) -> &[f64] {
        let o = (m * (self.n_steps + 1) + n) * self.n_assets;
        &self.prices[o..o + self.n_assets]
    }
}

/// Simulate `n_paths` independent market paths of `n_steps` periods.
///
/// Path `m` draws its Gaussian innovations from its own substream, so the
/// output is a pure function of the arguments regardless of thread count.
pub fn simulate_paths(
    market: &MarketSpec,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<MarketPaths> {
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::Input("n_paths and n_steps must be at least 1".into()));
    }
    let dz = market.dim_z();
    let na = market.n_assets();
    let per_path: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|m| simulate_one(market, n_steps, seed, m as u64))
        .collect();

    let mut predictors = Vec::with_capacity(n_paths * (n_steps + 1) * dz);
    let mut returns = Vec::with_capacity(n_paths * (n_steps + 1) * na);
    let mut prices = Vec::with_capacity(n_paths * (n_steps + 1) * na);
    for (z, r, s) in per_path {
        predictors.extend(z);
        returns.extend(r);
        prices.extend(s);
    }
    Ok(MarketPaths {
        n_paths,
        n_steps,
        dim_z: dz,
        n_assets: na,
        predictors,
        returns,
        prices,
    })
}

fn simulate_one(
    market: &MarketSpec,
    n_steps: usize,
    seed: u64,
    path: u64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dz = market.dim_z();
    let na = market.n_assets();
    let mut rng = substream(seed, Purpose::Innovations, path);
    let mut z = Vec::with_capacity((n_steps + 1) * dz);
    let mut r = Vec::with_capacity((n_steps + 1) * na);
    let mut s = Vec::with_capacity((n_steps + 1) * na);

    z.extend_from_slice(&market.z0);
    for &a in &market.assets {
        r.push(market.z0[a].exp_m1());
    }
    s.extend_from_slice(&market.s0);

    let mut shocks = vec![0.0; dz];
    let mut next = vec![0.0; dz];
    for n in 0..n_steps {
        for e in shocks.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        market.model.step(&z[n * dz..(n + 1) * dz], &shocks, &mut next);
        z.extend_from_slice(&next);
        for (i, &a) in market.assets.iter().enumerate() {
            let ret = next[a].exp_m1();
            r.push(ret);
            let prev = s[n * na + i];
            s.push(prev * (1.0 + ret));
        }
    }
    (z, r, s)
}

/// Uniform draw from `{α : α_i ≥ 0, Σ α_i ≤ 1}`.
///
/// Normalised unit exponentials give a flat Dirichlet over the `d` risky
/// weights plus cash; the cash coordinate is dropped.
pub fn draw_admissible_control<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..=d).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut alpha: Vec<f64> = draws[..d].iter().map(|e| e / total).collect();
    let s: f64 = alpha.iter().sum();
    if s > 1.0 {
        for a in alpha.iter_mut() {
            *a /= s;
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(intercept: Vec<f64>, coeff: Vec<Vec<f64>>, cov: Vec<Vec<f64>>) -> VarModel {
        VarModel::new(vec![], intercept, coeff, cov).unwrap()
    }

    #[test]
    fn degenerate_dynamics_keep_prices_flat() {
        let m = model(vec![0.0; 2], vec![vec![0.0; 2]; 2], vec![vec![0.0; 2]; 2]);
        let spec = MarketSpec::new(m, vec![0, 1], vec![100.0, 50.0]).unwrap();
        let p = simulate_paths(&spec, 4, 5, 1).unwrap();
        for m in 0..4 {
            for n in 0..=5 {
                assert!(p.returns(m, n).iter().all(|&r| r == 0.0));
                assert_eq!(p.prices(m, n), &[100.0, 50.0]);
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed_and_price_recursion_holds() {
        let m = model(
            vec![0.005, 0.0],
            vec![vec![0.1, 0.2], vec![0.0, 0.5]],
            vec![vec![0.002, 0.0005], vec![0.0005, 0.001]],
        );
        let spec = MarketSpec::new(m, vec![0], vec![100.0]).unwrap();
        let a = simulate_paths(&spec, 50, 12, 9).unwrap();
        let b = simulate_paths(&spec, 50, 12, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&spec, 50, 12, 10).unwrap();
        assert_ne!(a, c);
        for m in 0..50 {
            for n in 0..12 {
                let s0 = a.prices(m, n)[0];
                let s1 = a.prices(m, n + 1)[0];
                let r = a.returns(m, n + 1)[0];
                assert!(s1 > 0.0);
                assert!((s1 - s0 * (1.0 + r)).abs() <= 1e-12 * s1);
                assert!((r - a.predictors(m, n + 1)[0].exp_m1()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn one_step_mean_matches_stationary_mean() {
        let m = model(
            vec![0.004, 0.001],
            vec![vec![0.2, 0.1], vec![0.0, 0.6]],
            vec![vec![0.0016, 0.0002], vec![0.0002, 0.0004]],
        );
        assert!(m.is_stable());
        let mu = m.stationary_mean().unwrap();
        let spec = MarketSpec::new(m.clone(), vec![0], vec![1.0]).unwrap();
        let n_paths = 100_000;
        let p = simulate_paths(&spec, n_paths, 1, 3).unwrap();
        for i in 0..2 {
            let mean: f64 =
                (0..n_paths).map(|k| p.predictors(k, 1)[i]).sum::<f64>() / n_paths as f64;
            let se = (m.resid_cov()[i][i] / n_paths as f64).sqrt();
            assert!((mean - mu[i]).abs() < 3.0 * se, "series {i}: {mean} vs {}", mu[i]);
        }
    }

    #[test]
    fn admissible_draws_are_uniform_on_simplex() {
        let mut rng = substream(1, Purpose::Scratch, 0);
        let n = 100_000;
        let mut sum1 = 0.0;
        for _ in 0..n {
            let a = draw_admissible_control(1, &mut rng);
            assert!(a[0] >= 0.0 && a[0] <= 1.0);
            sum1 += a[0];
        }
        assert!((sum1 / n as f64 - 0.5).abs() < 0.01);

        let mut sums = [0.0; 2];
        for _ in 0..n {
            let a = draw_admissible_control(2, &mut rng);
            assert!(a.iter().all(|&x| x >= 0.0));
            assert!(a.iter().sum::<f64>() <= 1.0);
            sums[0] += a[0];
            sums[1] += a[1];
        }
        for s in sums {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn rejects_bad_market_specs() {
        let m = model(vec![0.0], vec![vec![0.0]], vec![vec![0.01]]);
        assert!(MarketSpec::new(m.clone(), vec![1], vec![1.0]).is_err());
        assert!(MarketSpec::new(m.clone(), vec![0], vec![0.0]).is_err());
        assert!(MarketSpec::new(m.clone(), vec![], vec![]).is_err());
        let spec = MarketSpec::new(m, vec![0], vec![1.0]).unwrap();
        assert!(simulate_paths(&spec, 0, 1, 0).is_err());
    }
}
