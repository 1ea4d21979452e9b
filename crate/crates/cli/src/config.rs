//! TOML run configuration.
//!
//! Input paths are resolved against the directory holding the config file.
//! Validation collects every field-level problem before anything is written.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lsmc_core::cost::{CostModel, CostTiming};
use lsmc_core::evaluation::UtilitySpec;
use lsmc_core::grid::mesh_steps;
use lsmc_core::market::{calibrate_var, log_returns, read_price_csv, synthetic_market, MarketSpec, VarModel};
use lsmc_core::solver::{MaximizerMode, ProblemSpec};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Training seed.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_paths")]
    pub eval_paths: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub mesh: f64,
    #[serde(default = "default_mode")]
    pub mode: MaximizerMode,
    #[serde(default = "default_refinements")]
    pub refinements: u32,
    #[serde(default = "default_state_degree")]
    pub state_degree: u32,
    #[serde(default)]
    pub ridge_lambda: Option<f64>,
    #[serde(default = "default_w0")]
    pub w0: f64,
    #[serde(default = "default_rf_annual")]
    pub rf_annual: f64,
    #[serde(default = "default_periods_per_year")]
    pub periods_per_year: u32,
    /// Use `ln w` instead of CRRA; `gamma` is then ignored.
    #[serde(default)]
    pub log_utility: bool,
    pub market: MarketConfig,
    #[serde(default)]
    pub costs: CostConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketSource {
    /// The pinned two-asset synthetic market.
    Synthetic,
    /// A VAR model JSON as written by `calibrate`.
    ModelJson,
    /// Close prices, calibrated on load.
    Csv,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub source: MarketSource,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Tradable series by name, in weight order. Empty means every series
    /// (the synthetic market trades `bond` and `equity`).
    #[serde(default)]
    pub assets: Vec<String>,
    /// Initial prices, 100 each when absent.
    #[serde(default)]
    pub s0: Option<Vec<f64>>,
    /// Initial predictor state, the stationary mean when absent.
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub enabled: bool,
    pub tc_rate: f64,
    pub k: f64,
    pub perm_impact_frac: f64,
    pub bid_ask_spread: f64,
    pub timing: CostTiming,
}

impl Default for CostConfig {
    fn default() -> Self {
        let c = CostModel::default();
        CostConfig {
            enabled: c.enabled,
            tc_rate: c.tc_rate,
            k: c.k,
            perm_impact_frac: c.perm_impact_frac,
            bid_ask_spread: c.bid_ask_spread,
            timing: c.timing,
        }
    }
}

impl CostConfig {
    pub fn model(&self) -> CostModel {
        CostModel {
            enabled: self.enabled,
            tc_rate: self.tc_rate,
            k: self.k,
            perm_impact_frac: self.perm_impact_frac,
            bid_ask_spread: self.bid_ask_spread,
            timing: self.timing,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub meshes: Vec<f64>,
    pub horizons: Vec<usize>,
    /// Maximizers compared by `bench-regression`.
    pub modes: Vec<MaximizerMode>,
    /// Control dimensions for the dimension sweep of `bench-mesh`; each uses
    /// the first `d` configured assets. Empty means every `d` from 1 up.
    pub dims: Vec<usize>,
    /// Wall-clock limit per cell; `--budget-secs` overrides.
    pub budget_secs: Option<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gammas: vec![5.0, 10.0, 15.0],
            meshes: vec![0.5, 0.25, 0.125, 0.0625, 0.03125],
            horizons: vec![3, 6, 12],
            modes: vec![
                MaximizerMode::LocalAdaptive,
                MaximizerMode::GlobalAdaptive(2),
                MaximizerMode::GlobalAdaptive(3),
                MaximizerMode::GlobalAdaptive(4),
            ],
            dims: Vec::new(),
            budget_secs: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_seed() -> u64 {
    7
}
fn default_eval_seed() -> u64 {
    1001
}
fn default_paths() -> usize {
    10_000
}
fn default_mode() -> MaximizerMode {
    MaximizerMode::LocalAdaptive
}
fn default_refinements() -> u32 {
    5
}
fn default_state_degree() -> u32 {
    2
}
fn default_w0() -> f64 {
    1.0
}
fn default_rf_annual() -> f64 {
    0.045
}
fn default_periods_per_year() -> u32 {
    12
}

/// A market with every tradable series resolved, ready to cut to `d` assets.
#[derive(Debug, Clone)]
pub struct LoadedMarket {
    model: VarModel,
    assets: Vec<usize>,
    s0: Vec<f64>,
    z0: Option<Vec<f64>>,
}

impl LoadedMarket {
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// The market trading only the first `d` configured assets.
    pub fn with_assets(&self, d: usize) -> Result<MarketSpec> {
        let assets = self.assets[..d].to_vec();
        let s0 = self.s0[..d].to_vec();
        let spec = match &self.z0 {
            Some(z0) => MarketSpec::with_initial_state(self.model.clone(), assets, s0, z0.clone()),
            None => MarketSpec::new(self.model.clone(), assets, s0),
        };
        spec.context("market")
    }

    pub fn full(&self) -> Result<MarketSpec> {
        self.with_assets(self.n_assets())
    }
}

impl RunConfig {
    /// Parse and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn market_path(&self) -> Option<PathBuf> {
        self.market.path.as_deref().map(|p| self.resolve(p))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        check(self.horizon >= 1, format!("horizon: must be at least 1, got {}", self.horizon));
        check_gamma(&mut check, "gamma", self.gamma, self.log_utility);
        check_mesh(&mut check, "mesh", self.mesh);
        check(self.n_paths >= 1, "n_paths: must be positive".into());
        check(self.eval_paths >= 1, "eval_paths: must be positive".into());
        check(
            self.eval_seed != self.seed,
            format!("eval_seed: must differ from the training seed {}", self.seed),
        );
        check(
            (1..=4).contains(&self.state_degree),
            format!("state_degree: must be in 1..=4, got {}", self.state_degree),
        );
        check(self.refinements <= 30, format!("refinements: at most 30, got {}", self.refinements));
        if let Some(l) = self.ridge_lambda {
            check(l.is_finite() && l >= 0.0, format!("ridge_lambda: must be nonnegative, got {l}"));
        }
        check(self.w0.is_finite() && self.w0 > 0.0, format!("w0: must be positive, got {}", self.w0));
        check(
            self.rf_annual.is_finite() && self.rf_annual > -1.0,
            format!("rf_annual: must exceed -1, got {}", self.rf_annual),
        );
        check(self.periods_per_year >= 1, "periods_per_year: must be positive".into());

        let c = &self.costs;
        check((0.0..1.0).contains(&c.tc_rate), format!("costs.tc_rate: must be in [0, 1), got {}", c.tc_rate));
        check(c.k.is_finite() && c.k >= 0.0, format!("costs.k: must be nonnegative, got {}", c.k));
        check(
            (0.0..=1.0).contains(&c.perm_impact_frac),
            format!("costs.perm_impact_frac: must be in [0, 1], got {}", c.perm_impact_frac),
        );
        check(
            (0.0..1.0).contains(&c.bid_ask_spread),
            format!("costs.bid_ask_spread: must be in [0, 1), got {}", c.bid_ask_spread),
        );

        let m = &self.market;
        match (m.source, &m.path) {
            (MarketSource::Synthetic, Some(_)) => {
                check(false, "market.path: not used by the synthetic market".into())
            }
            (MarketSource::Synthetic, None) => {}
            (_, None) => check(false, "market.path: required for this source".into()),
            (_, Some(p)) => {
                let p = self.resolve(p);
                check(p.is_file(), format!("market.path: {} does not exist", p.display()));
            }
        }
        if let Some(s0) = &m.s0 {
            check(
                s0.iter().all(|s| s.is_finite() && *s > 0.0),
                "market.s0: prices must be positive".into(),
            );
        }

        let s = &self.sweep;
        check(!s.gammas.is_empty(), "sweep.gammas: must not be empty".into());
        for (i, &g) in s.gammas.iter().enumerate() {
            check_gamma(&mut check, &format!("sweep.gammas[{i}]"), g, self.log_utility);
        }
        check(!s.meshes.is_empty(), "sweep.meshes: must not be empty".into());
        for (i, &d) in s.meshes.iter().enumerate() {
            check_mesh(&mut check, &format!("sweep.meshes[{i}]"), d);
        }
        check(!s.horizons.is_empty(), "sweep.horizons: must not be empty".into());
        for (i, &n) in s.horizons.iter().enumerate() {
            check(n >= 1, format!("sweep.horizons[{i}]: must be at least 1"));
        }
        check(!s.modes.is_empty(), "sweep.modes: must not be empty".into());
        for (i, &d) in s.dims.iter().enumerate() {
            check(d >= 1, format!("sweep.dims[{i}]: must be at least 1"));
        }
        if let Some(b) = s.budget_secs {
            check(b >= 1, "sweep.budget_secs: must be at least 1".into());
        }

        if errs.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  {}", errs.join("\n  "))
        }
    }

    /// Load or calibrate the VAR model and resolve the tradable assets.
    pub fn load_market(&self) -> Result<LoadedMarket> {
        let m = &self.market;
        let (model, default_assets) = match m.source {
            MarketSource::Synthetic => {
                let spec = synthetic_market();
                let names = spec.asset_names();
                (spec.model, names)
            }
            MarketSource::ModelJson => {
                let path = self.market_path().expect("validated");
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let model: VarModel = serde_json::from_str(&text)
                    .with_context(|| format!("market.path: {} is not a VAR model", path.display()))?;
                let names = model.names().to_vec();
                (model, names)
            }
            MarketSource::Csv => {
                let path = self.market_path().expect("validated");
                let table = read_price_csv(&path).with_context(|| format!("market.path: {}", path.display()))?;
                let model = calibrate_var(&log_returns(&table), &table.names)?;
                (model, table.names)
            }
        };
        let names = if m.assets.is_empty() { default_assets } else { m.assets.clone() };
        let mut assets = Vec::with_capacity(names.len());
        for a in &names {
            match model.index_of(a) {
                Some(i) => assets.push(i),
                None => bail!("market.assets: no series named `{a}`"),
            }
        }
        let s0 = match &m.s0 {
            Some(s0) if s0.len() != assets.len() => {
                bail!("market.s0: expected {} prices, got {}", assets.len(), s0.len())
            }
            Some(s0) => s0.clone(),
            None => vec![100.0; assets.len()],
        };
        if let Some(z0) = &m.z0 {
            if z0.len() != model.dim() {
                bail!("market.z0: expected {} values, got {}", model.dim(), z0.len());
            }
        }
        for (i, &d) in self.sweep.dims.iter().enumerate() {
            if d > assets.len() {
                bail!("sweep.dims[{i}]: {d} exceeds the {} configured assets", assets.len());
            }
        }
        let loaded = LoadedMarket {
            model,
            assets,
            s0,
            z0: m.z0.clone(),
        };
        loaded.full()?;
        Ok(loaded)
    }

    pub fn rf(&self) -> f64 {
        self.rf_annual / self.periods_per_year as f64
    }

    /// The problem for one sweep cell.
    pub fn problem(
        &self,
        market: MarketSpec,
        horizon: usize,
        gamma: f64,
        mesh: f64,
        mode: MaximizerMode,
    ) -> ProblemSpec {
        let mut spec = ProblemSpec::new(market, horizon, gamma);
        if self.log_utility {
            spec.utility = UtilitySpec::log();
        }
        spec.rf = self.rf();
        spec.w0 = self.w0;
        spec.mesh = mesh;
        spec.refinements = self.refinements;
        spec.n_paths = self.n_paths;
        spec.seed = self.seed;
        spec.costs = self.costs.model();
        spec.mode = mode;
        spec.state_degree = self.state_degree;
        spec.ridge_lambda = self.ridge_lambda;
        spec
    }

    /// The single cell described by the top-level fields.
    pub fn base_problem(&self, market: MarketSpec) -> ProblemSpec {
        self.problem(market, self.horizon, self.gamma, self.mesh, self.mode)
    }
}

fn check_gamma(check: &mut impl FnMut(bool, String), field: &str, g: f64, log_utility: bool) {
    check(g.is_finite() && g > 0.0, format!("{field}: risk aversion must be positive, got {g}"));
    if !log_utility {
        check(g != 1.0, format!("{field}: 1 is log utility, set log_utility = true instead"));
    }
}

fn check_mesh(check: &mut impl FnMut(bool, String), field: &str, d: f64) {
    check(mesh_steps(d).is_ok(), format!("{field}: {d} is not a power of 1/2"));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    const MINIMAL: &str = "horizon = 2\ngamma = 5.0\nmesh = 0.25\n[market]\nsource = \"synthetic\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.n_paths, 10_000);
        assert_eq!(cfg.refinements, 5);
        assert_eq!(cfg.mode, MaximizerMode::LocalAdaptive);
        assert_eq!(cfg.costs.tc_rate, 0.003);
        assert_eq!(cfg.costs.k, 8e-6);
        assert!((cfg.rf() - 0.045 / 12.0).abs() < 1e-18);
        let market = cfg.load_market().unwrap();
        assert_eq!(market.n_assets(), 2);
        let spec = cfg.base_problem(market.full().unwrap());
        spec.validate().unwrap();
    }

    #[test]
    fn every_bad_field_is_named() {
        let text = "horizon = 0\ngamma = 1.0\nmesh = 0.3\nseed = 5\neval_seed = 5\n\
                    [market]\nsource = \"csv\"\n[sweep]\nmeshes = []\n";
        let err = format!("{:#}", parse(text).unwrap_err());
        for field in ["horizon:", "gamma:", "mesh:", "eval_seed:", "market.path:", "sweep.meshes:"] {
            assert!(err.contains(field), "{field} missing from {err}");
        }
    }

    #[test]
    fn unknown_fields_and_modes_are_rejected() {
        assert!(parse(&format!("{MINIMAL}bogus = 1\n")).is_err());
        let text = MINIMAL.replace("mesh = 0.25", "mesh = 0.25\nmode = \"newton\"");
        assert!(parse(&text).is_err());
        let text = MINIMAL.replace("mesh = 0.25", "mesh = 0.25\nmode = \"global_adaptive:3\"");
        assert_eq!(parse(&text).unwrap().mode, MaximizerMode::GlobalAdaptive(3));
    }

    #[test]
    fn asset_names_must_exist() {
        let text = format!("{MINIMAL}assets = [\"gold\"]\n");
        let cfg = parse(&text).unwrap();
        let err = cfg.load_market().unwrap_err().to_string();
        assert!(err.contains("market.assets"), "{err}");
    }

    #[test]
    fn dims_are_bounded_by_assets() {
        let text = format!("{MINIMAL}[sweep]\ndims = [1, 3]\n");
        let err = parse(&text).unwrap().load_market().unwrap_err().to_string();
        assert!(err.contains("sweep.dims[1]"), "{err}");
    }
}
