use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PathSet, ProblemSpec};
use crate::cost::Rebalance;
use crate::error::{Error, Result};
use crate::grid::ControlGrid;
use crate::regression::{dot, FeatureKind, FeatureMap, GramSolver};

/// Paths per accumulation chunk. Fixed so sums do not depend on thread count.
const CHUNK: usize = 256;

/// Continuation-value fits of one time step: one coefficient row per grid
/// node over a shared basis in the state `(z, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFits {
    pub feature_map: FeatureMap,
    pub coeffs: Vec<Vec<f64>>,
}

impl StepFits {
    /// `ĈV^j(z, w)` for every node `j`.
    pub fn continuation_values(&self, z: &[f64], w: f64) -> Vec<f64> {
        let mut x = z.to_vec();
        x.push(w);
        let f = self.feature_map.map(&x);
        self.coeffs.iter().map(|b| dot(b, &f)).collect()
    }

    fn wealth_degree(&self) -> usize {
        self.feature_map.degree() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Condition estimate of the state-basis normal equations; absent when
    /// the factorization broke down.
    pub condition: Option<f64>,
    pub rank_deficient: bool,
    /// Recomputed wealths that hit the floor.
    pub floor_count: usize,
    /// Mean in-sample R² over grid nodes.
    pub mean_r2: f64,
}

/// Per-path coefficients of every next-step fit as a polynomial in
/// standardised wealth, laid out `[power][node]`.
struct WealthPolys {
    degree: usize,
    n_nodes: usize,
    shift: f64,
    scale: f64,
    coef: Vec<f64>,
}

struct NextValue<'a> {
    fits: &'a StepFits,
    /// Wealth exponent of each monomial.
    powers: Vec<usize>,
    dz: usize,
}

impl<'a> NextValue<'a> {
    fn new(fits: &'a StepFits) -> Self {
        let dz = fits.feature_map.dim_in() - 1;
        let powers = fits
            .feature_map
            .exponents()
            .iter()
            .map(|e| e[dz] as usize)
            .collect();
        NextValue { fits, powers, dz }
    }

    fn polys(&self, z: &[f64], scratch: &mut [f64], basis: &mut [f64], out: &mut WealthPolys) {
        let map = &self.fits.feature_map;
        map.standardize_into(&[z, &[0.0]].concat(), scratch);
        scratch[self.dz] = 1.0;
        map.eval_standardized(scratch, basis);
        let j_count = self.fits.coeffs.len();
        out.coef.iter_mut().for_each(|c| *c = 0.0);
        for (j, beta) in self.fits.coeffs.iter().enumerate() {
            for (k, b) in beta.iter().enumerate() {
                out.coef[self.powers[k] * j_count + j] += b * basis[k];
            }
        }
        out.shift = map.shift()[self.dz];
        out.scale = map.scale()[self.dz];
    }
}

impl WealthPolys {
    fn max_at(&self, w: f64) -> f64 {
        let u = (w - self.shift) / self.scale;
        let n = self.n_nodes;
        let top = &self.coef[self.degree * n..(self.degree + 1) * n];
        let mut best = f64::NEG_INFINITY;
        if self.degree == 2 {
            let (c0, c1) = (&self.coef[..n], &self.coef[n..2 * n]);
            for j in 0..n {
                let v = c0[j] + u * (c1[j] + u * top[j]);
                best = best.max(v);
            }
            return best;
        }
        for j in 0..n {
            let mut v = top[j];
            for p in (0..self.degree).rev() {
                v = v * u + self.coef[p * n + j];
            }
            best = best.max(v);
        }
        best
    }
}

struct Partial {
    gram: Vec<f64>,
    xty: Vec<f64>,
    yty: Vec<f64>,
    sum_y: Vec<f64>,
    floors: usize,
}

impl Partial {
    fn zeros(k: usize, j: usize) -> Self {
        Partial {
            gram: vec![0.0; k * k],
            xty: vec![0.0; k * j],
            yty: vec![0.0; j],
            sum_y: vec![0.0; j],
            floors: 0,
        }
    }

    fn add(&mut self, other: &Partial) {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        for (a, b) in self.yty.iter_mut().zip(&other.yty) {
            *a += b;
        }
        for (a, b) in self.sum_y.iter_mut().zip(&other.sum_y) {
            *a += b;
        }
        self.floors += other.floors;
    }
}

/// Regress the value of choosing each grid node at `t_n` on the state basis.
///
/// For every path and node, wealth is recomputed from the randomised state
/// with that node's weights (costs measured against the randomised prior
/// holdings), valued by `next` at `t_{n+1}` (or by the utility at the
/// horizon), and regressed on `ψ(Z_n, W̃_n)`.
pub fn backward_step(
    spec: &ProblemSpec,
    paths: &PathSet,
    grid: &ControlGrid,
    n: usize,
    next: Option<&StepFits>,
    deadline: Option<Instant>,
) -> Result<(StepFits, StepDiagnostics)> {
    let m_paths = paths.n_paths();
    let d = grid.dim();
    let dz = paths.market.dim_z;
    let j_count = grid.len();
    if n >= paths.n_steps() || (next.is_none() != (n + 1 == paths.n_steps())) {
        return Err(Error::Usage(format!("backward step {n} has the wrong continuation")));
    }
    if let Some(f) = next {
        if f.coeffs.len() != j_count || f.feature_map.dim_in() != dz + 1 {
            return Err(Error::Usage("next-step fits do not match the grid".into()));
        }
    }

    let state = |m: usize| -> Vec<f64> {
        let mut x = paths.market.predictors(m, n).to_vec();
        x.push(paths.wealth(m, n));
        x
    };
    let states: Vec<Vec<f64>> = (0..m_paths).map(state).collect();
    let map = FeatureMap::fitted(
        FeatureKind::StatePoly,
        spec.state_degree,
        dz + 1,
        states.iter().map(Vec::as_slice),
    )?;
    let k = map.dim_out();
    let floor = spec.wealth_floor();
    let floor_value = spec.utility.value(floor);
    let next_value = next.map(NextValue::new);
    let utility = spec.utility;

    let chunks: Vec<(usize, usize)> = (0..m_paths)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(m_paths)))
        .collect();
    let partials: Vec<Result<Partial>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            if deadline.is_some_and(|t| Instant::now() > t) {
                return Err(Error::BudgetExceeded {
                    elapsed_secs: f64::NAN,
                });
            }
            let mut acc = Partial::zeros(k, j_count);
            let mut feat = vec![0.0; k];
            let mut scratch = vec![0.0; dz + 1];
            let mut y = vec![0.0; j_count];
            let mut positions = vec![0.0; d];
            let mut post = vec![0.0; d];
            let mut polys = next_value.as_ref().map(|nv| {
                let deg = nv.fits.wealth_degree();
                (
                    WealthPolys {
                        degree: deg,
                        n_nodes: j_count,
                        shift: 0.0,
                        scale: 1.0,
                        coef: vec![0.0; (deg + 1) * j_count],
                    },
                    vec![0.0; dz + 1],
                    vec![0.0; nv.fits.feature_map.dim_out()],
                )
            });
            for m in start..end {
                if let (Some(nv), Some((wp, s, b))) = (next_value.as_ref(), polys.as_mut()) {
                    nv.polys(paths.market.predictors(m, n + 1), s, b, wp);
                }
                let w = paths.wealth(m, n);
                for (j, yj) in y.iter_mut().enumerate() {
                    let step = Rebalance {
                        wealth: w,
                        weights: grid.node(j),
                        prices: paths.market.prices(m, n),
                        next_returns: paths.market.returns(m, n + 1),
                        rf: spec.rf,
                        prev_positions: paths.prior_positions(m, n),
                    };
                    let out = spec.costs.settle(&step, floor, &mut positions, &mut post);
                    acc.floors += out.floored as usize;
                    *yj = match polys.as_ref() {
                        Some((wp, _, _)) => wp.max_at(out.wealth).max(floor_value),
                        None => utility.value(out.wealth),
                    };
                }
                map.map_into(&states[m], &mut scratch, &mut feat);
                for a in 0..k {
                    let fa = feat[a];
                    if fa == 0.0 {
                        continue;
                    }
                    for b in a..k {
                        acc.gram[a * k + b] += fa * feat[b];
                    }
                    let row = &mut acc.xty[a * j_count..(a + 1) * j_count];
                    for (r, yj) in row.iter_mut().zip(&y) {
                        *r += fa * yj;
                    }
                }
                for j in 0..j_count {
                    acc.yty[j] += y[j] * y[j];
                    acc.sum_y[j] += y[j];
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = Partial::zeros(k, j_count);
    for p in partials {
        total.add(&p?);
    }
    let gram = DMatrix::from_fn(k, k, |a, b| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        total.gram[lo * k + hi]
    });
    let solver = GramSolver::new(&gram);
    let mut coeffs = Vec::with_capacity(j_count);
    let mut r2_sum = 0.0;
    for j in 0..j_count {
        let rhs = DVector::from_fn(k, |a, _| total.xty[a * j_count + j]);
        let beta = solver.solve(&rhs);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite continuation-value fit at step {n}, node {j}"
            )));
        }
        let rss = total.yty[j] - 2.0 * beta.dot(&rhs) + (&gram * &beta).dot(&beta);
        let tss = total.yty[j] - total.sum_y[j] * total.sum_y[j] / m_paths as f64;
        r2_sum += if tss > 1e-300 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };
        coeffs.push(beta.iter().copied().collect());
    }
    let diagnostics = StepDiagnostics {
        step: n,
        condition: Some(solver.condition).filter(|c| c.is_finite()),
        rank_deficient: solver.rank_deficient,
        floor_count: total.floors,
        mean_r2: r2_sum / j_count as f64,
    };
    Ok((
        StepFits {
            feature_map: map,
            coeffs,
        },
        diagnostics,
    ))
}
