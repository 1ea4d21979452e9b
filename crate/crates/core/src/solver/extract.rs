use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{argmax_first, refine_grid, ControlGrid, LocalPatch};
use crate::regression::{
    basis_size, dot, least_squares, ridge_least_squares, FeatureKind, FeatureMap,
};

/// How the policy turns per-node continuation values into a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaximizerMode {
    /// Argmax over the grid nodes.
    GridOnly,
    /// Quadratic Ridge fit over the neighbours of the discrete argmax,
    /// maximised by adaptive grids.
    LocalAdaptive,
    /// Polynomial fit of the given degree over every node, maximised by
    /// adaptive grids around the discrete argmax.
    GlobalAdaptive(u32),
}

impl fmt::Display for MaximizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaximizerMode::GridOnly => f.write_str("grid_only"),
            MaximizerMode::LocalAdaptive => f.write_str("local_adaptive"),
            MaximizerMode::GlobalAdaptive(deg) => write!(f, "global_adaptive:{deg}"),
        }
    }
}

impl FromStr for MaximizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "grid_only" => Ok(MaximizerMode::GridOnly),
            "local_adaptive" => Ok(MaximizerMode::LocalAdaptive),
            other => {
                let deg = other
                    .strip_prefix("global_adaptive:")
                    .and_then(|d| d.parse::<u32>().ok())
                    .filter(|d| (1..=4).contains(d))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown maximizer mode {other:?}; expected grid_only, local_adaptive or global_adaptive:<1-4>"
                        ))
                    })?;
                Ok(MaximizerMode::GlobalAdaptive(deg))
            }
        }
    }
}

impl Serialize for MaximizerMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MaximizerMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlChoice {
    pub alpha: Vec<f64>,
    /// Grid index of the discrete argmax.
    pub discrete_index: usize,
    /// Evaluations of the fitted surface at refinement points other than the incumbent.
    pub evaluations: usize,
    /// Fitted value at the incumbent after each refinement level, starting with level 0.
    pub trace: Vec<f64>,
    /// The fit could not be identified from its nominal sample: the local
    /// neighbours lacked three distinct values on some axis (and the sample
    /// was widened), or the global grid had fewer nodes than basis functions.
    pub underdetermined: bool,
}

/// Maximizer configuration, reusable across queries on one grid.
#[derive(Debug, Clone)]
pub struct Maximizer {
    mode: MaximizerMode,
    refinements: u32,
    ridge_lambda: Option<f64>,
    global_map: Option<FeatureMap>,
}

impl Maximizer {
    pub fn new(
        grid: &ControlGrid,
        mode: MaximizerMode,
        refinements: u32,
        ridge_lambda: Option<f64>,
    ) -> Result<Self> {
        if let Some(l) = ridge_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("ridge_lambda {l} must be >= 0")));
            }
        }
        let global_map = match mode {
            MaximizerMode::GlobalAdaptive(deg) => Some(FeatureMap::fitted(
                FeatureKind::ControlPoly,
                deg,
                grid.dim(),
                grid.nodes().iter().map(Vec::as_slice),
            )?),
            _ => None,
        };
        Ok(Maximizer {
            mode,
            refinements,
            ridge_lambda,
            global_map,
        })
    }

    pub fn mode(&self) -> MaximizerMode {
        self.mode
    }

    pub fn extract(&self, grid: &ControlGrid, cv: &[f64]) -> Result<ControlChoice> {
        if cv.len() != grid.len() {
            return Err(Error::Input(format!(
                "{} continuation values for {} grid nodes",
                cv.len(),
                grid.len()
            )));
        }
        if cv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("continuation values must be finite".into()));
        }
        let j0 = argmax_first(cv);
        let center = grid.node(j0);
        match self.mode {
            MaximizerMode::GridOnly => Ok(ControlChoice {
                alpha: center.to_vec(),
                discrete_index: j0,
                evaluations: 0,
                trace: vec![cv[j0]],
                underdetermined: false,
            }),
            MaximizerMode::LocalAdaptive => {
                let patch = grid.local_patch(center)?;
                let d = grid.dim();
                let map = FeatureMap::with_standardization(
                    FeatureKind::ControlPoly,
                    2,
                    center.to_vec(),
                    vec![grid.mesh(); d],
                )?;
                let underdetermined = !identifies_quadratic(grid, &patch.nodes);
                let sample = if underdetermined {
                    widened_sample(grid, center)
                } else {
                    patch.nodes.clone()
                };
                let n = sample.len();
                let mut x = DMatrix::zeros(n, map.dim_out());
                for (r, &j) in sample.iter().enumerate() {
                    let f = map.map(grid.node(j));
                    for (c, v) in f.into_iter().enumerate() {
                        x[(r, c)] = v;
                    }
                }
                let y = DVector::from_iterator(n, sample.iter().map(|&j| cv[j]));
                let lambda = self.ridge_lambda.unwrap_or(1e-6 * n as f64);
                let beta: Vec<f64> = ridge_least_squares(&x, &y, lambda).coeffs.iter().copied().collect();
                let phi = |a: &[f64]| dot(&beta, &map.map(a));
                let mut choice = refine(&patch, self.refinements, phi);
                choice.discrete_index = j0;
                choice.underdetermined = underdetermined;
                Ok(choice)
            }
            MaximizerMode::GlobalAdaptive(_) => {
                let map = self.global_map.as_ref().expect("global feature map");
                let x = map.design_matrix(grid.nodes());
                let sol = least_squares(&x, &DVector::from_column_slice(cv));
                let beta: Vec<f64> = sol.coeffs.iter().copied().collect();
                let patch = grid.local_patch(center)?;
                let phi = |a: &[f64]| dot(&beta, &map.map(a));
                let mut choice = refine(&patch, self.refinements, phi);
                choice.discrete_index = j0;
                choice.underdetermined = grid.len() < basis_size(grid.dim(), map.degree());
                Ok(choice)
            }
        }
    }
}

/// A quadratic in `d` variables needs three distinct values per axis.
fn identifies_quadratic(grid: &ControlGrid, nodes: &[usize]) -> bool {
    (0..grid.dim()).all(|i| {
        let mut values: Vec<f64> = nodes.iter().map(|&j| grid.node(j)[i]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        values.len() >= 3
    })
}

/// Grid nodes within sup-distance `2δ` of the centre, in grid order.
///
/// Used as the regression sample when the neighbours alone cannot identify
/// the quadratic, which happens on the boundary of the admissible set.
fn widened_sample(grid: &ControlGrid, center: &[f64]) -> Vec<usize> {
    let reach = 2.0 * grid.mesh() + 1e-12;
    (0..grid.len())
        .filter(|&j| {
            grid.node(j)
                .iter()
                .zip(center)
                .all(|(a, c)| (a - c).abs() <= reach)
        })
        .collect()
}

/// Adaptive-grid maximisation of `phi` starting from the patch centre.
/// Ties go to the lexicographically smallest point of each `A_p`.
fn refine(patch: &LocalPatch, levels: u32, phi: impl Fn(&[f64]) -> f64) -> ControlChoice {
    let mut incumbent = patch.center.clone();
    let mut best = phi(&incumbent);
    let mut trace = vec![best];
    let mut evaluations = 0;
    for p in 1..=levels {
        let mut level_best = f64::NEG_INFINITY;
        let mut level_arg = incumbent.clone();
        for point in refine_grid(&incumbent, patch.mesh, p, patch) {
            let v = if point == incumbent {
                best
            } else {
                evaluations += 1;
                phi(&point)
            };
            if v > level_best {
                level_best = v;
                level_arg = point;
            }
        }
        incumbent = level_arg;
        best = level_best;
        trace.push(best);
    }
    ControlChoice {
        alpha: incumbent,
        discrete_index: patch.center_index,
        evaluations,
        trace,
        underdetermined: false,
    }
}

/// One-off extraction; builds the maximizer for each call.
pub fn extract_control(
    cv: &[f64],
    grid: &ControlGrid,
    mode: MaximizerMode,
    refinements: u32,
) -> Result<ControlChoice> {
    Maximizer::new(grid, mode, refinements, None)?.extract(grid, cv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::in_admissible_set;
    use crate::rng::{substream, Purpose};
    use rand::Rng;

    fn values(grid: &ControlGrid, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        grid.nodes().iter().map(|a| f(a)).collect()
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in [
            MaximizerMode::GridOnly,
            MaximizerMode::LocalAdaptive,
            MaximizerMode::GlobalAdaptive(4),
        ] {
            assert_eq!(m.to_string().parse::<MaximizerMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<MaximizerMode>(&json).unwrap(), m);
        }
        assert!("global_adaptive:7".parse::<MaximizerMode>().is_err());
        assert!("newton".parse::<MaximizerMode>().is_err());
    }

    #[test]
    fn symmetric_parabola_stays_at_center() {
        let grid = ControlGrid::new(1, 0.25).unwrap();
        let cv = values(&grid, |a| -(a[0] - 0.5).powi(2));
        let c = extract_control(&cv, &grid, MaximizerMode::LocalAdaptive, 5).unwrap();
        assert_eq!(c.alpha, vec![0.5]);
    }

    #[test]
    fn off_grid_parabola_within_final_mesh() {
        let grid = ControlGrid::new(1, 0.25).unwrap();
        let cv = values(&grid, |a| -(a[0] - 0.3).powi(2));
        let c = extract_control(&cv, &grid, MaximizerMode::LocalAdaptive, 5).unwrap();
        assert!((c.alpha[0] - 0.3).abs() <= 1.0 / 128.0, "{:?}", c.alpha);
        let g = extract_control(&cv, &grid, MaximizerMode::GridOnly, 5).unwrap();
        assert_eq!(g.alpha, vec![0.25]);
    }

    #[test]
    fn boundary_centre_still_fits_a_quadratic() {
        let grid = ControlGrid::new(1, 0.25).unwrap();
        let cv = values(&grid, |a| -(a[0] - 0.07).powi(2));
        let c = extract_control(&cv, &grid, MaximizerMode::LocalAdaptive, 5).unwrap();
        assert!(c.underdetermined);
        assert!((c.alpha[0] - 0.07).abs() <= 1.0 / 128.0, "{:?}", c.alpha);
        let grid = ControlGrid::new(2, 0.25).unwrap();
        let cv = values(&grid, |a| -(a[0] - 0.755).powi(2) - (a[1] - 0.048).powi(2));
        let c = extract_control(&cv, &grid, MaximizerMode::LocalAdaptive, 5).unwrap();
        assert!((c.alpha[0] - 0.755).abs() <= 1.0 / 128.0 && (c.alpha[1] - 0.048).abs() <= 1.0 / 128.0);
    }

    #[test]
    fn flat_values_pick_smallest_node() {
        for d in 1..=3 {
            let grid = ControlGrid::new(d, 0.25).unwrap();
            let cv = vec![1.5; grid.len()];
            for mode in [
                MaximizerMode::GridOnly,
                MaximizerMode::LocalAdaptive,
                MaximizerMode::GlobalAdaptive(2),
            ] {
                let c = extract_control(&cv, &grid, mode, 5).unwrap();
                assert_eq!(c.alpha, vec![0.0; d], "{mode}");
            }
        }
    }

    #[test]
    fn refinement_is_monotone_bounded_and_admissible() {
        let mut rng = substream(21, Purpose::Scratch, 0);
        for d in 1..=3 {
            let grid = ControlGrid::new(d, 0.25).unwrap();
            let max = Maximizer::new(&grid, MaximizerMode::LocalAdaptive, 5, None).unwrap();
            for _ in 0..50 {
                let target: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 0.6).collect();
                let tilt: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let cv = values(&grid, |a| {
                    a.iter()
                        .zip(&target)
                        .zip(&tilt)
                        .map(|((x, t), s)| -(x - t).powi(2) + 0.1 * s * x * x * x)
                        .sum()
                });
                let c = max.extract(&grid, &cv).unwrap();
                assert!(c.trace.windows(2).all(|w| w[1] >= w[0]));
                assert!(c.evaluations <= 5 * 2 * d);
                assert!(in_admissible_set(&c.alpha));
                let patch = grid.local_patch(grid.node(c.discrete_index)).unwrap();
                assert!(patch.contains(&c.alpha));
            }
        }
    }

    #[test]
    fn positive_affine_transform_leaves_choice_unchanged() {
        let grid = ControlGrid::new(2, 0.125).unwrap();
        let cv = values(&grid, |a| -(a[0] - 0.31).powi(2) - 2.0 * (a[1] - 0.22).powi(2));
        let moved: Vec<f64> = cv.iter().map(|v| 4.0 * v + 7.0).collect();
        for mode in [MaximizerMode::GridOnly, MaximizerMode::LocalAdaptive] {
            let a = extract_control(&cv, &grid, mode, 5).unwrap();
            let b = extract_control(&moved, &grid, mode, 5).unwrap();
            assert_eq!(a.alpha, b.alpha, "{mode}");
        }
    }

    #[test]
    fn global_fit_finds_interior_optimum() {
        let grid = ControlGrid::new(2, 0.125).unwrap();
        let cv = values(&grid, |a| -(a[0] - 0.33).powi(2) - (a[1] - 0.41).powi(2));
        let c = extract_control(&cv, &grid, MaximizerMode::GlobalAdaptive(2), 5).unwrap();
        assert!((c.alpha[0] - 0.33).abs() < 1.0 / 128.0 && (c.alpha[1] - 0.41).abs() < 1.0 / 128.0);
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        let grid = ControlGrid::new(1, 0.5).unwrap();
        assert!(extract_control(&[0.0, 1.0], &grid, MaximizerMode::GridOnly, 5).is_err());
        assert!(extract_control(&[0.0, f64::NAN, 1.0], &grid, MaximizerMode::GridOnly, 5).is_err());
    }
}
