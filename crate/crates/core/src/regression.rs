//! Polynomial feature maps and least-squares fits.
//!
//! Monomials are ordered by total degree, then lexicographically by the
//! non-decreasing variable index sequence: for `(a, b)` at degree 2 this is
//! `(1, a, b, a², ab, b²)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal equations with a condition estimate above this fall back to an
/// orthogonal decomposition.
const MAX_CONDITION: f64 = 1e12;
/// Relative singular-value cutoff for the minimum-norm fallback.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    StatePoly,
    ControlPoly,
}

/// Exponent vectors of every monomial of total degree `≤ degree` in `dim` variables.
pub fn monomial_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn extend(dim: usize, from: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in from..dim {
            cur[i] += 1;
            extend(dim, i, left - 1, cur, out);
            cur[i] -= 1;
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0; dim];
    for total in 0..=degree {
        extend(dim, 0, total, &mut cur, &mut out);
    }
    out
}

/// Number of monomials, `C(dim + degree, degree)`.
pub fn basis_size(dim: usize, degree: u32) -> usize {
    let mut c: u128 = 1;
    for i in 1..=degree as u128 {
        c = c * (dim as u128 + i) / i;
    }
    c as usize
}

/// Raw polynomial features of `x` up to `degree`, constant first.
pub fn poly_features(x: &[f64], degree: u32) -> Vec<f64> {
    let plan = MonomialPlan::new(x.len(), degree);
    let mut out = vec![0.0; plan.len()];
    plan.eval(x, &mut out);
    out
}

/// Each monomial after the constant is a lower one times a single variable.
#[derive(Debug, Clone, PartialEq)]
struct MonomialPlan {
    exponents: Vec<Vec<u32>>,
    recipe: Vec<(usize, usize)>,
}

impl MonomialPlan {
    fn new(dim: usize, degree: u32) -> Self {
        let exponents = monomial_exponents(dim, degree);
        let position: std::collections::HashMap<&Vec<u32>, usize> =
            exponents.iter().enumerate().map(|(i, e)| (e, i)).collect();
        let recipe = exponents
            .iter()
            .skip(1)
            .map(|e| {
                let var = e.iter().rposition(|&p| p > 0).expect("non-constant monomial");
                let mut parent = e.clone();
                parent[var] -= 1;
                (position[&parent], var)
            })
            .collect();
        MonomialPlan { exponents, recipe }
    }

    fn len(&self) -> usize {
        self.exponents.len()
    }

    #[inline]
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for (k, &(parent, var)) in self.recipe.iter().enumerate() {
            out[k + 1] = out[parent] * x[var];
        }
    }
}

/// Polynomial basis over standardised inputs `(x − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapDoc", into = "FeatureMapDoc")]
pub struct FeatureMap {
    kind: FeatureKind,
    degree: u32,
    shift: Vec<f64>,
    scale: Vec<f64>,
    plan: MonomialPlan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMapDoc {
    pub kind: FeatureKind,
    pub degree: u32,
    pub dim_in: usize,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl TryFrom<FeatureMapDoc> for FeatureMap {
    type Error = Error;

    fn try_from(doc: FeatureMapDoc) -> Result<Self> {
        if doc.shift.len() != doc.dim_in || doc.scale.len() != doc.dim_in {
            return Err(Error::Input("feature map standardisation has the wrong length".into()));
        }
        FeatureMap::with_standardization(doc.kind, doc.degree, doc.shift, doc.scale)
    }
}

impl From<FeatureMap> for FeatureMapDoc {
    fn from(m: FeatureMap) -> Self {
        FeatureMapDoc {
            kind: m.kind,
            degree: m.degree,
            dim_in: m.shift.len(),
            shift: m.shift,
            scale: m.scale,
        }
    }
}

impl FeatureMap {
    pub fn with_standardization(
        kind: FeatureKind,
        degree: u32,
        shift: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<Self> {
        if !(1..=4).contains(&degree) {
            return Err(Error::Input(format!("polynomial degree {degree} not in 1..=4")));
        }
        if shift.len() != scale.len()
            || scale.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || shift.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Input("invalid feature standardisation".into()));
        }
        let plan = MonomialPlan::new(shift.len(), degree);
        Ok(FeatureMap {
            kind,
            degree,
            shift,
            scale,
            plan,
        })
    }

    /// Unstandardised basis.
    pub fn raw(kind: FeatureKind, degree: u32, dim_in: usize) -> Result<Self> {
        Self::with_standardization(kind, degree, vec![0.0; dim_in], vec![1.0; dim_in])
    }

    /// Standardise each input by its sample mean and standard deviation.
    /// Constant inputs are shifted by their exact value with unit scale.
    pub fn fitted<'a, I>(kind: FeatureKind, degree: u32, dim_in: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut first: Option<Vec<f64>> = None;
        let mut constant = vec![true; dim_in];
        let mut sum = vec![0.0; dim_in];
        let mut sum_sq = vec![0.0; dim_in];
        let rows: Vec<&[f64]> = samples.into_iter().collect();
        for x in &rows {
            if x.len() != dim_in {
                return Err(Error::Input("sample width does not match the feature map".into()));
            }
            let f = first.get_or_insert_with(|| x.to_vec());
            for i in 0..dim_in {
                constant[i] &= x[i] == f[i];
                sum[i] += x[i];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Input("cannot standardise an empty sample".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for x in &rows {
            for i in 0..dim_in {
                let dv = x[i] - mean[i];
                sum_sq[i] += dv * dv;
            }
        }
        let first = first.unwrap_or_default();
        let mut shift = Vec::with_capacity(dim_in);
        let mut scale = Vec::with_capacity(dim_in);
        for i in 0..dim_in {
            let sd = (sum_sq[i] / n as f64).sqrt();
            if constant[i] || !(sd > 1e-14 * mean[i].abs()) {
                shift.push(if constant[i] { first[i] } else { mean[i] });
                scale.push(1.0);
            } else {
                shift.push(mean[i]);
                scale.push(sd);
            }
        }
        Self::with_standardization(kind, degree, shift, scale)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dim_in(&self) -> usize {
        self.shift.len()
    }

    pub fn dim_out(&self) -> usize {
        self.plan.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.plan.exponents
    }

    pub fn standardize_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.shift.len() {
            out[i] = (x[i] - self.shift[i]) / self.scale[i];
        }
    }

    /// Features of `x`, written into `out` (length `dim_out`); `scratch`
    /// must hold `dim_in` values.
    #[inline]
    pub fn map_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.standardize_into(x, scratch);
        self.plan.eval(scratch, out);
    }

    /// Basis evaluated at inputs that are already standardised.
    #[inline]
    pub fn eval_standardized(&self, xs: &[f64], out: &mut [f64]) {
        self.plan.eval(xs, out);
    }

    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; self.dim_in()];
        let mut out = vec![0.0; self.dim_out()];
        self.map_into(x, &mut scratch, &mut out);
        out
    }

    pub fn design_matrix(&self, inputs: &[Vec<f64>]) -> DMatrix<f64> {
        let k = self.dim_out();
        let mut x = DMatrix::zeros(inputs.len(), k);
        let mut scratch = vec![0.0; self.dim_in()];
        let mut row = vec![0.0; k];
        for (i, input) in inputs.iter().enumerate() {
            self.map_into(input, &mut scratch, &mut row);
            for j in 0..k {
                x[(i, j)] = row[j];
            }
        }
        x
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_samples: usize,
    /// Residual sum of squares on the training sample.
    pub rss: f64,
    /// Estimated condition number of the (penalised) normal equations.
    pub condition: f64,
    /// Set when the minimum-norm fallback was used or the basis was underdetermined.
    pub rank_deficient: bool,
    /// Euclidean norm of the penalised (standardised) coefficients.
    pub penalized_norm: f64,
}

/// Coefficients on a raw feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coeffs: DVector<f64>,
    pub diagnostics: FitDiagnostics,
}

/// A fitted linear model over a polynomial feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub feature_map: FeatureMap,
    pub coeffs: Vec<f64>,
    pub ridge_lambda: f64,
    pub diagnostics: FitDiagnostics,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, &self.feature_map.map(x))
    }

    /// Prediction from already-mapped features.
    #[inline]
    pub fn predict_features(&self, features: &[f64]) -> f64 {
        dot(&self.coeffs, features)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_inputs(map: &FeatureMap, inputs: &[Vec<f64>], targets: &[f64]) -> Result<()> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::Input(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.iter().any(|x| x.len() != map.dim_in()) {
        return Err(Error::Input("input width does not match the feature map".into()));
    }
    if inputs.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Input("regression data must be finite".into()));
    }
    Ok(())
}

pub fn fit_ols(map: FeatureMap, inputs: &[Vec<f64>], targets: &[f64]) -> Result<LinearFit> {
    check_inputs(&map, inputs, targets)?;
    let x = map.design_matrix(inputs);
    let sol = least_squares(&x, &DVector::from_column_slice(targets));
    Ok(LinearFit {
        feature_map: map,
        coeffs: sol.coeffs.iter().copied().collect(),
        ridge_lambda: 0.0,
        diagnostics: sol.diagnostics,
    })
}

pub fn fit_ridge(
    map: FeatureMap,
    inputs: &[Vec<f64>],
    targets: &[f64],
    ridge_lambda: f64,
) -> Result<LinearFit> {
    check_inputs(&map, inputs, targets)?;
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::Input(format!("ridge penalty {ridge_lambda} must be >= 0")));
    }
    let x = map.design_matrix(inputs);
    let sol = ridge_least_squares(&x, &DVector::from_column_slice(targets), ridge_lambda);
    Ok(LinearFit {
        feature_map: map,
        coeffs: sol.coeffs.iter().copied().collect(),
        ridge_lambda,
        diagnostics: sol.diagnostics,
    })
}

/// Ordinary least squares via the normal equations, with a minimum-norm SVD
/// fallback when they are ill-conditioned or underdetermined.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Solution {
    let (m, k) = x.shape();
    let gram = x.transpose() * x;
    let rhs = x.transpose() * y;
    let chol = if m >= k { cholesky_with_condition(&gram) } else { None };
    let (coeffs, condition, rank_deficient) = match chol {
        Some((c, cond)) if cond <= MAX_CONDITION => (c.solve(&rhs), cond, false),
        other => {
            let cond = other.map_or(f64::INFINITY, |(_, c)| c);
            let (beta, rank) = min_norm_svd(x, y);
            (beta, cond, rank < k)
        }
    };
    let rss = (y - x * &coeffs).norm_squared();
    let penalized_norm = coeffs.rows(1.min(k), k.saturating_sub(1)).norm();
    Solution {
        coeffs,
        diagnostics: FitDiagnostics {
            n_samples: m,
            rss,
            condition,
            rank_deficient,
            penalized_norm,
        },
    }
}

/// Ridge regression with an unpenalised intercept.
///
/// The first constant nonzero column is the intercept. Every other column is
/// centred and scaled to unit variance before the penalty applies, the
/// targets are centred, and coefficients are mapped back to the raw columns.
/// Other constant columns get zero coefficients.
pub fn ridge_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Solution {
    let (m, k) = x.shape();
    let col_is_constant = |j: usize| x.column(j).iter().all(|&v| v == x[(0, j)]);
    let intercept = (0..k).find(|&j| col_is_constant(j) && x[(0, j)] != 0.0);

    let mut active = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for j in 0..k {
        if Some(j) == intercept || col_is_constant(j) {
            continue;
        }
        let col = x.column(j);
        let (mean, sd) = if intercept.is_some() {
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64).sqrt();
            (mean, sd)
        } else {
            (0.0, (col.norm_squared() / m as f64).sqrt())
        };
        if sd > 0.0 {
            active.push(j);
            means.push(mean);
            sds.push(sd);
        }
    }

    let y_mean = if intercept.is_some() { y.mean() } else { 0.0 };
    let a = active.len();
    let z = DMatrix::from_fn(m, a, |i, c| (x[(i, active[c])] - means[c]) / sds[c]);
    let yc = y.map(|v| v - y_mean);

    let mut gram = z.transpose() * &z;
    for i in 0..a {
        gram[(i, i)] += lambda;
    }
    let rhs = z.transpose() * &yc;
    let (b, condition, rank_deficient) = match cholesky_with_condition(&gram) {
        Some((c, cond)) if a > 0 && cond <= MAX_CONDITION => (c.solve(&rhs), cond, m < k),
        _ if a == 0 => (DVector::zeros(0), 1.0, m < k),
        other => {
            let cond = other.map_or(f64::INFINITY, |(_, c)| c);
            let (b, _) = min_norm_svd(&z, &yc);
            (b, cond, true)
        }
    };

    let mut coeffs = DVector::zeros(k);
    let mut offset = y_mean;
    for (c, &j) in active.iter().enumerate() {
        coeffs[j] = b[c] / sds[c];
        offset -= b[c] * means[c] / sds[c];
    }
    if let Some(j) = intercept {
        coeffs[j] = offset / x[(0, j)];
    }
    let rss = (y - x * &coeffs).norm_squared();
    Solution {
        coeffs,
        diagnostics: FitDiagnostics {
            n_samples: m,
            rss,
            condition,
            rank_deficient,
            penalized_norm: b.norm(),
        },
    }
}

fn cholesky_with_condition(
    gram: &DMatrix<f64>,
) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if gram.nrows() == 0 {
        return None;
    }
    let chol = gram.clone().cholesky()?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..gram.nrows()).map(|i| l[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return None;
    }
    let ratio = max / min;
    Some((chol, ratio * ratio))
}

/// Minimum-norm least-squares solution and numerical rank.
fn min_norm_svd(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, usize) {
    let k = x.ncols();
    if x.nrows() == 0 || k == 0 {
        return (DVector::zeros(k), 0);
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * RANK_TOL).max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let beta = svd.solve(y, eps).unwrap_or_else(|_| DVector::zeros(k));
    (beta, rank)
}

/// A Gram matrix factored once and reused for many right-hand sides.
///
/// Used when one design matrix is regressed against many target vectors.
/// Columns that are identically zero get zero coefficients.
#[derive(Debug, Clone)]
pub struct GramSolver {
    dim: usize,
    active: Vec<usize>,
    inner: GramFactor,
    pub condition: f64,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone)]
enum GramFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    PseudoInverse(DMatrix<f64>),
}

impl GramSolver {
    /// Factor `XᵀX`; on ill-conditioning, uses the eigen-decomposition
    /// pseudo-inverse, which yields the minimum-norm least-squares solution.
    pub fn new(gram: &DMatrix<f64>) -> Self {
        let dim = gram.nrows();
        let active: Vec<usize> = (0..dim).filter(|&i| gram[(i, i)] > 0.0).collect();
        let reduced = gram.select_rows(&active).select_columns(&active);
        let dropped = active.len() < dim;
        match cholesky_with_condition(&reduced) {
            Some((c, cond)) if cond <= MAX_CONDITION => GramSolver {
                dim,
                active,
                inner: GramFactor::Cholesky(c),
                condition: cond,
                rank_deficient: dropped,
            },
            other => {
                let cond = other.map_or(f64::INFINITY, |(_, c)| c);
                let eig = reduced.clone().symmetric_eigen();
                let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
                // eigenvalues of XᵀX are squared singular values
                let cutoff = lmax * RANK_TOL * RANK_TOL;
                let inv = eig
                    .eigenvalues
                    .map(|l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 });
                let v = &eig.eigenvectors;
                let pinv = v * DMatrix::from_diagonal(&inv) * v.transpose();
                GramSolver {
                    dim,
                    active,
                    inner: GramFactor::PseudoInverse(pinv),
                    condition: cond,
                    rank_deficient: true,
                }
            }
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let r = rhs.select_rows(&self.active);
        let b = match &self.inner {
            GramFactor::Cholesky(c) => c.solve(&r),
            GramFactor::PseudoInverse(p) => p * r,
        };
        let mut out = DVector::zeros(self.dim);
        for (i, &a) in self.active.iter().enumerate() {
            out[a] = b[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn binomial(n: usize, k: usize) -> usize {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn feature_order_and_counts() {
        let f = poly_features(&[2.0, 3.0], 2);
        assert_eq!(f, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(poly_features(&[1.0, 2.0, 3.0, 4.0], 1).len(), 5);
        assert_eq!(poly_features(&[0.5, 0.7], 4).len(), 15);
        for dim in 1..=5 {
            for deg in 1..=4 {
                assert_eq!(basis_size(dim, deg), binomial(dim + deg as usize, deg as usize));
                assert_eq!(monomial_exponents(dim, deg).len(), basis_size(dim, deg));
            }
        }
        let e = monomial_exponents(3, 3);
        for (k, ex) in e.iter().enumerate() {
            let x = [1.3f64, -0.4, 2.1];
            let direct: f64 = ex.iter().zip(&x).map(|(p, v)| v.powi(*p as i32)).product();
            assert!((poly_features(&x, 3)[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_map_is_unit_vector_at_shift() {
        let samples = [vec![1.0, 10.0], vec![2.0, 30.0], vec![4.0, 20.0]];
        let map = FeatureMap::fitted(
            FeatureKind::StatePoly,
            2,
            2,
            samples.iter().map(Vec::as_slice),
        )
        .unwrap();
        let at_shift = map.map(map.shift());
        assert_eq!(at_shift[0], 1.0);
        assert!(at_shift[1..].iter().all(|&v| v == 0.0));
        assert_eq!(map.dim_out(), 6);
    }

    #[test]
    fn constant_inputs_are_shifted_exactly() {
        let samples = vec![vec![0.1, 1.0]; 7];
        let map = FeatureMap::fitted(FeatureKind::StatePoly, 2, 2, samples.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(map.scale(), &[1.0, 1.0]);
        assert_eq!(map.map(&[0.1, 1.0])[1..], [0.0; 5]);
    }

    fn random_design(m: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, Purpose::Scratch, 0);
        DMatrix::from_fn(m, k, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 4.0 - 1.0 })
    }

    #[test]
    fn ols_recovers_exact_linear_targets() {
        let x = random_design(40, 5, 1);
        let beta = DVector::from_vec(vec![0.3, -1.0, 2.5, 0.0, 7.0]);
        let y = &x * &beta;
        let sol = least_squares(&x, &y);
        assert!((sol.coeffs - beta).amax() < 1e-9);
        assert!(sol.diagnostics.rss < 1e-18);
    }

    #[test]
    fn ols_constant_targets() {
        let x = random_design(30, 4, 2);
        let y = DVector::from_element(30, -0.25);
        let sol = least_squares(&x, &y);
        assert!((sol.coeffs[0] + 0.25).abs() < 1e-12);
        assert!(sol.coeffs.rows(1, 3).amax() < 1e-12);
    }

    #[test]
    fn ols_noisy_within_standard_errors() {
        let m = 10_000;
        let sigma = 0.5;
        let x = random_design(m, 3, 3);
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut rng = substream(4, Purpose::Scratch, 0);
        let y = &x * &beta
            + DVector::from_fn(m, |_, _| { let e: f64 = StandardNormal.sample(&mut rng); sigma * e });
        let sol = least_squares(&x, &y);
        // analytic covariance σ² (XᵀX)⁻¹
        let cov = (x.transpose() * &x).try_inverse().unwrap() * (sigma * sigma);
        for i in 0..3 {
            let se = cov[(i, i)].sqrt();
            assert!((sol.coeffs[i] - beta[i]).abs() < 3.0 * se, "coef {i}");
        }
    }

    #[test]
    fn ols_residuals_orthogonal() {
        let x = random_design(200, 6, 5);
        let mut rng = substream(6, Purpose::Scratch, 0);
        let y = DVector::from_fn(200, |_, _| rng.random::<f64>());
        let sol = least_squares(&x, &y);
        let r = &y - &x * &sol.coeffs;
        assert!((x.transpose() * r).amax() < 1e-8 * y.norm());
    }

    #[test]
    fn ols_rank_deficient_falls_back_to_min_norm() {
        let mut x = random_design(50, 3, 7);
        for i in 0..50 {
            x[(i, 2)] = x[(i, 1)];
        }
        let y = x.column(1) * 2.0;
        let sol = least_squares(&x, &y);
        assert!(sol.diagnostics.rank_deficient);
        assert!((sol.coeffs[1] - 1.0).abs() < 1e-8 && (sol.coeffs[2] - 1.0).abs() < 1e-8);
        // underdetermined
        let x = random_design(3, 6, 8);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let sol = least_squares(&x, &y);
        assert!(sol.diagnostics.rank_deficient);
        assert!((&x * &sol.coeffs - y).amax() < 1e-9);
    }

    #[test]
    fn ridge_zero_penalty_equals_ols() {
        let x = random_design(60, 5, 9);
        let mut rng = substream(10, Purpose::Scratch, 0);
        let y = DVector::from_fn(60, |_, _| rng.random::<f64>());
        let a = least_squares(&x, &y);
        let b = ridge_least_squares(&x, &y, 0.0);
        assert!((a.coeffs - b.coeffs).amax() < 1e-10);
    }

    #[test]
    fn ridge_large_penalty_shrinks_to_mean() {
        let x = random_design(60, 4, 11);
        let mut rng = substream(12, Purpose::Scratch, 0);
        let y = DVector::from_fn(60, |_, _| rng.random::<f64>() + 3.0);
        let sol = ridge_least_squares(&x, &y, 1e14);
        assert!(sol.coeffs.rows(1, 3).amax() < 1e-10);
        assert!((sol.coeffs[0] - y.mean()).abs() < 1e-9);
    }

    #[test]
    fn ridge_duplicated_column_is_stable() {
        let base = random_design(80, 3, 13);
        let mut x = DMatrix::zeros(80, 4);
        for i in 0..80 {
            for j in 0..3 {
                x[(i, j)] = base[(i, j)];
            }
            x[(i, 3)] = base[(i, 2)];
        }
        let mut rng = substream(14, Purpose::Scratch, 0);
        let y = DVector::from_fn(80, |i, _| {
            0.5 + base[(i, 1)] - 2.0 * base[(i, 2)] + 0.1 * rng.random::<f64>()
        });
        let ridge = ridge_least_squares(&x, &y, 1e-6);
        assert!(ridge.coeffs.iter().all(|c| c.is_finite()));
        let dedup = least_squares(&base, &y);
        let diff = (&x * &ridge.coeffs - &base * &dedup.coeffs).amax();
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn ridge_norm_nonincreasing_in_penalty() {
        let x = random_design(25, 6, 15);
        let mut rng = substream(16, Purpose::Scratch, 0);
        let y = DVector::from_fn(25, |_, _| rng.random::<f64>());
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let n = ridge_least_squares(&x, &y, lambda).diagnostics.penalized_norm;
            assert!(n <= prev + 1e-12);
            prev = n;
        }
    }

    #[test]
    fn quadratic_through_three_points() {
        let map = FeatureMap::raw(FeatureKind::ControlPoly, 2, 1).unwrap();
        let inputs = vec![vec![0.0], vec![0.25], vec![0.5]];
        let targets: Vec<f64> = inputs.iter().map(|x| -(x[0] - 0.3f64).powi(2)).collect();
        let fit = fit_ridge(map, &inputs, &targets, 0.0).unwrap();
        for (x, y) in inputs.iter().zip(&targets) {
            assert!((fit.predict(x) - y).abs() < 1e-12);
        }
        let c = &fit.coeffs;
        let vertex = -c[1] / (2.0 * c[2]);
        assert!((vertex - 0.3).abs() < 1e-9);
    }

    #[test]
    fn predict_zero_and_exact_linear() {
        let map = FeatureMap::raw(FeatureKind::StatePoly, 1, 2).unwrap();
        let zero = LinearFit {
            feature_map: map.clone(),
            coeffs: vec![0.0; 3],
            ridge_lambda: 0.0,
            diagnostics: FitDiagnostics::default(),
        };
        assert_eq!(zero.predict(&[3.0, 4.0]), 0.0);
        let inputs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let targets: Vec<f64> = inputs.iter().map(|x| 1.0 + 2.0 * x[0] - x[1]).collect();
        let fit = fit_ols(map, &inputs, &targets).unwrap();
        for (x, y) in inputs.iter().zip(&targets) {
            assert!((fit.predict(x) - y).abs() < 1e-9);
        }
    }

    #[test]
    fn fits_reload_and_predict_identically() {
        let samples: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1, (i as f64).sin()]).collect();
        let targets: Vec<f64> = samples.iter().map(|x| x[0] * x[1] + x[1].powi(3)).collect();
        let map = FeatureMap::fitted(FeatureKind::StatePoly, 3, 2, samples.iter().map(Vec::as_slice)).unwrap();
        let fit = fit_ols(map, &samples, &targets).unwrap();
        let json = serde_json::to_string(&fit).unwrap();
        let back: LinearFit = serde_json::from_str(&json).unwrap();
        for x in &samples {
            assert_eq!(fit.predict(x).to_bits(), back.predict(x).to_bits());
        }
    }

    #[test]
    fn gram_solver_handles_zero_columns() {
        let x = DMatrix::from_fn(20, 3, |i, j| match j {
            0 => 1.0,
            1 => 0.0,
            _ => i as f64,
        });
        let y = DVector::from_fn(20, |i, _| 2.0 + 0.5 * i as f64);
        let solver = GramSolver::new(&(x.transpose() * &x));
        assert!(solver.rank_deficient);
        let b = solver.solve(&(x.transpose() * &y));
        assert!((b[0] - 2.0).abs() < 1e-8 && b[1] == 0.0 && (b[2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gram_solver_on_constant_state_returns_mean() {
        let x = DMatrix::from_fn(7, 4, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
        let b = GramSolver::new(&(x.transpose() * &x)).solve(&(x.transpose() * &y));
        assert!((b[0] - 127.0 / 7.0).abs() < 1e-12);
        assert!(b.rows(1, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let map = FeatureMap::raw(FeatureKind::StatePoly, 2, 2).unwrap();
        assert!(fit_ols(map.clone(), &[vec![1.0]], &[1.0]).is_err());
        assert!(fit_ols(map.clone(), &[vec![1.0, 2.0]], &[]).is_err());
        assert!(fit_ridge(map, &[vec![1.0, 2.0]], &[1.0], -1.0).is_err());
        assert!(FeatureMap::raw(FeatureKind::StatePoly, 5, 2).is_err());
    }
}
