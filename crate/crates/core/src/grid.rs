//! Discrete simplex grids of portfolio weights and the local neighbourhoods
//! used by the adaptive maximiser.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for sup-norm and simplex comparisons on binary-fraction weights.
pub const GRID_TOL: f64 = 1e-12;

/// Whether `alpha` is long-only with total risky weight at most one.
pub fn in_admissible_set(alpha: &[f64]) -> bool {
    alpha.iter().all(|&a| a >= -GRID_TOL) && alpha.iter().sum::<f64>() <= 1.0 + GRID_TOL
}

/// Lexicographic comparison of weight vectors; used for all tie-breaking.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Index of the largest value; ties go to the lexicographically smallest point.
///
/// `points` must be sorted lexicographically, which makes "first maximum"
/// and "lexicographically smallest maximum" the same thing.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

/// All lattice points `k·δ` with `k ∈ ℕ^d` and `Σ k_i δ ≤ 1`, sorted
/// lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    d: usize,
    mesh: f64,
    steps: u32,
    nodes: Vec<Vec<f64>>,
    lattice: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

/// Serializable description of a grid; the nodes are rebuilt from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub mesh: f64,
}

/// Validate that `mesh = 2^{-s}` for some `s ≥ 1` and return `1/mesh`.
pub fn mesh_steps(mesh: f64) -> Result<u32> {
    if mesh.is_finite() && mesh > 0.0 && mesh <= 0.5 {
        let inv = 1.0 / mesh;
        let s = inv.log2().round();
        if (1.0..=30.0).contains(&s) && 2f64.powi(s as i32) == inv {
            return Ok(inv as u32);
        }
    }
    Err(Error::Config(format!(
        "grid mesh {mesh} is not of the form 1/2^s with s >= 1"
    )))
}

impl ControlGrid {
    pub fn new(d: usize, mesh: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("control dimension must be at least 1".into()));
        }
        let steps = mesh_steps(mesh)?;
        let mut lattice = Vec::new();
        let mut current = vec![0u32; d];
        enumerate_lattice(0, steps, &mut current, &mut lattice);
        let nodes = lattice
            .iter()
            .map(|k| k.iter().map(|&ki| ki as f64 * mesh).collect())
            .collect();
        let index = lattice
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Ok(ControlGrid {
            d,
            mesh,
            steps,
            nodes,
            lattice,
            index,
        })
    }

    pub fn from_spec(spec: GridSpec) -> Result<Self> {
        Self::new(spec.d, spec.mesh)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            d: self.d,
            mesh: self.mesh,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j]
    }

    /// Index of the grid node equal to `alpha`, if any.
    pub fn find(&self, alpha: &[f64]) -> Option<usize> {
        if alpha.len() != self.d {
            return None;
        }
        let mut key = Vec::with_capacity(self.d);
        for &a in alpha {
            let k = (a / self.mesh).round();
            if k < 0.0 || (k * self.mesh - a).abs() > GRID_TOL {
                return None;
            }
            key.push(k as u32);
        }
        self.index.get(&key).copied()
    }

    /// Neighbours of a node within sup-norm distance `δ`, and the continuous
    /// hypercube around it clipped to `[0, 1]`.
    pub fn local_patch(&self, center: &[f64]) -> Result<LocalPatch> {
        let j = self.find(center).ok_or_else(|| {
            Error::Usage(format!("{center:?} is not a node of the control grid"))
        })?;
        let base = &self.lattice[j];
        let mut nodes = Vec::new();
        let mut offset = vec![-1i64; self.d];
        loop {
            let mut total = 0i64;
            let mut ok = true;
            let mut key = Vec::with_capacity(self.d);
            for (b, o) in base.iter().zip(&offset) {
                let v = *b as i64 + o;
                if v < 0 {
                    ok = false;
                    break;
                }
                total += v;
                key.push(v as u32);
            }
            if ok && total <= self.steps as i64 {
                nodes.push(self.index[&key]);
            }
            // odometer over {-1, 0, 1}^d, last coordinate fastest
            let mut pos = self.d;
            loop {
                if pos == 0 {
                    let center = self.nodes[j].clone();
                    let bounds = center
                        .iter()
                        .map(|&c| ((c - self.mesh).max(0.0), (c + self.mesh).min(1.0)))
                        .collect();
                    return Ok(LocalPatch {
                        center,
                        center_index: j,
                        mesh: self.mesh,
                        nodes,
                        bounds,
                    });
                }
                pos -= 1;
                if offset[pos] < 1 {
                    offset[pos] += 1;
                    break;
                }
                offset[pos] = -1;
            }
        }
    }
}

fn enumerate_lattice(pos: usize, remaining: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == current.len() {
        out.push(current.clone());
        return;
    }
    for k in 0..=remaining {
        current[pos] = k;
        enumerate_lattice(pos + 1, remaining - k, current, out);
    }
    current[pos] = 0;
}

/// `L^disc` and `L^cont` around a grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPatch {
    pub center: Vec<f64>,
    pub center_index: usize,
    pub mesh: f64,
    /// Grid indices of the neighbours, in lexicographic order.
    pub nodes: Vec<usize>,
    /// Per-coordinate `[c_i − δ, c_i + δ] ∩ [0, 1]`.
    pub bounds: Vec<(f64, f64)>,
}

impl LocalPatch {
    /// Membership in the continuous hypercube intersected with the admissible set.
    pub fn contains(&self, alpha: &[f64]) -> bool {
        alpha
            .iter()
            .zip(&self.bounds)
            .all(|(&a, &(lo, hi))| a >= lo - GRID_TOL && a <= hi + GRID_TOL)
            && in_admissible_set(alpha)
    }
}

/// Adaptive grid `A_p`: the incumbent plus single-axis offsets of `δ/2^p`,
/// keeping only points inside the patch hypercube and the admissible set.
/// The result is sorted lexicographically.
pub fn refine_grid(incumbent: &[f64], mesh: f64, level: u32, patch: &LocalPatch) -> Vec<Vec<f64>> {
    let h = mesh / 2f64.powi(level as i32);
    let mut points = vec![incumbent.to_vec()];
    for i in 0..incumbent.len() {
        for sign in [-1.0, 1.0] {
            let mut p = incumbent.to_vec();
            p[i] += sign * h;
            if patch.contains(&p) {
                points.push(p);
            }
        }
    }
    points.sort_by(|a, b| lex_cmp(a, b));
    points
}
