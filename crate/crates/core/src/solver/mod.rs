//! Least squares Monte Carlo with control discretization.
//!
//! [`solve`] simulates paths under uniformly random controls, then walks
//! backwards fitting one continuation-value regression per grid node. The
//! value passed to the previous step is the pathwise discrete maximum over
//! nodes for every maximizer mode; the mode only changes how a [`Policy`]
//! maps a state to weights.

mod backward;
mod extract;
mod forward;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backward::{backward_step, StepDiagnostics, StepFits};
pub use extract::{extract_control, ControlChoice, Maximizer, MaximizerMode};
pub use forward::{forward_simulate, forward_simulate_with, PathSet};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::evaluation::UtilitySpec;
use crate::grid::{mesh_steps, ControlGrid, GridSpec};
use crate::market::MarketSpec;
use crate::regression::basis_size;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub market: MarketSpec,
    /// Number of rebalancing periods `N`.
    pub horizon: usize,
    /// Risk-free return per period.
    pub rf: f64,
    pub utility: UtilitySpec,
    pub w0: f64,
    /// Grid mesh `δ`, a power of 1/2.
    pub mesh: f64,
    /// Adaptive refinement depth `P`.
    pub refinements: u32,
    pub n_paths: usize,
    pub seed: u64,
    pub costs: CostModel,
    pub mode: MaximizerMode,
    /// Degree of the state polynomial basis in `(z, w)`.
    pub state_degree: u32,
    /// Penalty of the local control fits; `1e-6 · patch size` when absent.
    #[serde(default)]
    pub ridge_lambda: Option<f64>,
}

impl ProblemSpec {
    /// Monthly defaults: 4.5% annual cash rate, unit initial wealth, mesh 1/8,
    /// five refinements, 10⁴ paths, default costs, local adaptive maximizer.
    pub fn new(market: MarketSpec, horizon: usize, gamma: f64) -> Self {
        ProblemSpec {
            market,
            horizon,
            rf: 0.045 / 12.0,
            utility: UtilitySpec::crra(gamma),
            w0: 1.0,
            mesh: 0.125,
            refinements: 5,
            n_paths: 10_000,
            seed: 1,
            costs: CostModel::default(),
            mode: MaximizerMode::LocalAdaptive,
            state_degree: 2,
            ridge_lambda: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.rf.is_finite() && self.rf > -1.0) {
            return bad(format!("risk-free rate {} out of range", self.rf));
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return bad(format!("initial wealth {} must be positive", self.w0));
        }
        mesh_steps(self.mesh)?;
        if !(1..=4).contains(&self.state_degree) {
            return bad(format!("state_degree {} not in 1..=4", self.state_degree));
        }
        let k = basis_size(self.market.dim_z() + 1, self.state_degree);
        if self.n_paths < k {
            return bad(format!(
                "n_paths {} is below the {k} state basis functions",
                self.n_paths
            ));
        }
        if let Some(l) = self.ridge_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("ridge_lambda {l} must be >= 0"));
            }
        }
        self.costs.validate()?;
        self.utility.validate()
    }

    pub fn wealth_floor(&self) -> f64 {
        1e-8 * self.w0
    }

    /// SHA-256 of the canonical JSON of everything except the maximizer mode.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("spec serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("mode");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

/// Fitted continuation values for every step plus the maximizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub spec_digest: String,
    pub mode: MaximizerMode,
    pub grid: GridSpec,
    pub refinements: u32,
    pub ridge_lambda: Option<f64>,
    pub asset_names: Vec<String>,
    pub steps: Vec<StepFits>,
}

impl Policy {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn validate(&self) -> Result<()> {
        let grid = ControlGrid::from_spec(self.grid)?;
        if self.steps.is_empty() {
            return Err(Error::Input("policy has no steps".into()));
        }
        if self.asset_names.len() != grid.dim() {
            return Err(Error::Input("policy asset names do not match the grid".into()));
        }
        let dim_in = self.steps[0].feature_map.dim_in();
        for (n, s) in self.steps.iter().enumerate() {
            if s.feature_map.dim_in() != dim_in || s.coeffs.len() != grid.len() {
                return Err(Error::Input(format!("policy step {n} has the wrong shape")));
            }
            let k = s.feature_map.dim_out();
            if s.coeffs.iter().any(|b| b.len() != k || b.iter().any(|v| !v.is_finite())) {
                return Err(Error::Input(format!("policy step {n} has invalid coefficients")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: Policy = serde_json::from_str(text)?;
        policy.validate()?;
        Ok(policy)
    }

    /// Same fits under a different maximizer.
    pub fn with_mode(&self, mode: MaximizerMode) -> Self {
        Policy {
            mode,
            ..self.clone()
        }
    }

    pub fn controller(&self) -> Result<Controller<'_>> {
        self.validate()?;
        let grid = ControlGrid::from_spec(self.grid)?;
        let maximizer = Maximizer::new(&grid, self.mode, self.refinements, self.ridge_lambda)?;
        Ok(Controller {
            policy: self,
            grid,
            maximizer,
        })
    }
}

/// A policy bound to its grid, ready to answer state queries.
#[derive(Debug, Clone)]
pub struct Controller<'p> {
    policy: &'p Policy,
    grid: ControlGrid,
    maximizer: Maximizer,
}

impl Controller<'_> {
    pub fn grid(&self) -> &ControlGrid {
        &self.grid
    }

    pub fn mode(&self) -> MaximizerMode {
        self.maximizer.mode()
    }

    pub fn continuation_values(&self, n: usize, z: &[f64], w: f64) -> Result<Vec<f64>> {
        let fits = self
            .policy
            .steps
            .get(n)
            .ok_or_else(|| Error::Usage(format!("step {n} is past the policy horizon")))?;
        if z.len() + 1 != fits.feature_map.dim_in() {
            return Err(Error::Input("state has the wrong dimension".into()));
        }
        Ok(fits.continuation_values(z, w))
    }

    pub fn choose(&self, n: usize, z: &[f64], w: f64) -> Result<ControlChoice> {
        let cv = self.continuation_values(n, z, w)?;
        self.maximizer.extract(&self.grid, &cv)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    /// Abort with [`Error::BudgetExceeded`] once this instant passes.
    pub deadline: Option<Instant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub spec_digest: String,
    pub mode: MaximizerMode,
    pub n_paths: usize,
    pub horizon: usize,
    pub grid_nodes: usize,
    /// Estimated value at the initial state, `max_j ĈV^j(z_0, w_0)`.
    pub value_t0: f64,
    /// In-sample certainty-equivalent return of `value_t0`, basis points per period.
    pub cer_in_sample_bp: f64,
    pub initial_allocation: Vec<f64>,
    pub initial_discrete_allocation: Vec<f64>,
    pub forward_floor_count: usize,
    pub steps: Vec<StepDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub forward_secs: f64,
    /// Indexed by time step.
    pub backward_secs: Vec<f64>,
    pub total_secs: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub policy: Policy,
    pub diagnostics: SolveDiagnostics,
    pub timings: Timings,
}

pub fn solve(spec: &ProblemSpec) -> Result<SolveOutput> {
    solve_with(spec, &SolveOptions::default())
}

pub fn solve_with(spec: &ProblemSpec, options: &SolveOptions) -> Result<SolveOutput> {
    let start = Instant::now();
    spec.validate()?;
    let over_budget = || Error::BudgetExceeded {
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    let grid = ControlGrid::new(spec.market.n_assets(), spec.mesh)?;
    let paths = forward_simulate(spec)?;
    let forward_secs = start.elapsed().as_secs_f64();
    if options.deadline.is_some_and(|t| Instant::now() > t) {
        return Err(over_budget());
    }

    let n_steps = spec.horizon;
    let mut fits: Vec<Option<StepFits>> = vec![None; n_steps];
    let mut step_diags: Vec<Option<StepDiagnostics>> = vec![None; n_steps];
    let mut backward_secs = vec![0.0; n_steps];
    for n in (0..n_steps).rev() {
        let t = Instant::now();
        let next = fits.get(n + 1).and_then(Option::as_ref);
        let (f, diag) = backward_step(spec, &paths, &grid, n, next, options.deadline)
            .map_err(|e| match e {
                Error::BudgetExceeded { .. } => over_budget(),
                other => other,
            })?;
        fits[n] = Some(f);
        step_diags[n] = Some(diag);
        backward_secs[n] = t.elapsed().as_secs_f64();
    }

    let policy = Policy {
        spec_digest: spec.digest(),
        mode: spec.mode,
        grid: grid.spec(),
        refinements: spec.refinements,
        ridge_lambda: spec.ridge_lambda,
        asset_names: spec.market.asset_names(),
        steps: fits.into_iter().map(|f| f.expect("every step fitted")).collect(),
    };
    let controller = policy.controller()?;
    let cv0 = controller.continuation_values(0, &spec.market.z0, spec.w0)?;
    let choice = controller.maximizer.extract(&grid, &cv0)?;
    let value_t0 = cv0[choice.discrete_index];
    let ce = spec.utility.inverse(value_t0) / spec.w0;
    let cer_in_sample_bp = 1e4 * (ce.powf(1.0 / n_steps as f64) - 1.0);
    let diagnostics = SolveDiagnostics {
        spec_digest: policy.spec_digest.clone(),
        mode: spec.mode,
        n_paths: spec.n_paths,
        horizon: n_steps,
        grid_nodes: grid.len(),
        value_t0,
        cer_in_sample_bp,
        initial_allocation: choice.alpha,
        initial_discrete_allocation: grid.node(choice.discrete_index).to_vec(),
        forward_floor_count: paths.floor_count,
        steps: step_diags.into_iter().map(|d| d.expect("every step diagnosed")).collect(),
    };
    Ok(SolveOutput {
        policy,
        diagnostics,
        timings: Timings {
            forward_secs,
            backward_secs,
            total_secs: start.elapsed().as_secs_f64(),
        },
    })
}
