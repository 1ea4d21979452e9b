use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const JITTER_SCALE: f64 = 1e-12;
const JITTER_RETRIES: usize = 3;

/// First-order vector autoregression `x_t = intercept + coeff · x_{t-1} + e_t`
/// with `e_t ~ N(0, resid_cov)`.
///
/// `coeff[i][j]` is the loading of series `i` on the lagged value of series `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VarModelDoc", into = "VarModelDoc")]
pub struct VarModel {
    dim: usize,
    names: Vec<String>,
    intercept: Vec<f64>,
    coeff: Vec<Vec<f64>>,
    resid_cov: Vec<Vec<f64>>,
    resid_factor: Vec<Vec<f64>>,
}

/// On-disk form of a [`VarModel`]. The covariance factor is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarModelDoc {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
    pub intercept: Vec<f64>,
    pub coeff: Vec<Vec<f64>>,
    pub resid_cov: Vec<Vec<f64>>,
}

impl TryFrom<VarModelDoc> for VarModel {
    type Error = Error;

    fn try_from(doc: VarModelDoc) -> Result<Self> {
        VarModel::new(doc.names, doc.intercept, doc.coeff, doc.resid_cov)
    }
}

impl From<VarModel> for VarModelDoc {
    fn from(m: VarModel) -> Self {
        VarModelDoc {
            dim: m.dim,
            names: m.names,
            intercept: m.intercept,
            coeff: m.coeff,
            resid_cov: m.resid_cov,
        }
    }
}

impl VarModel {
    pub fn new(
        names: Vec<String>,
        intercept: Vec<f64>,
        coeff: Vec<Vec<f64>>,
        resid_cov: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = intercept.len();
        if dim == 0 {
            return Err(Error::Input("VAR model needs at least one series".into()));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == dim && m.iter().all(|r| r.len() == dim);
        if !square(&coeff) || !square(&resid_cov) {
            return Err(Error::Input(format!("VAR matrices must be {dim}x{dim}")));
        }
        if !names.is_empty() && names.len() != dim {
            return Err(Error::Input(format!(
                "{} series names given for a {dim}-dimensional model",
                names.len()
            )));
        }
        let finite = intercept
            .iter()
            .chain(coeff.iter().flatten())
            .chain(resid_cov.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("VAR parameters must be finite".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if (resid_cov[i][j] - resid_cov[j][i]).abs() > SYMMETRY_TOL {
                    return Err(Error::Input(format!(
                        "residual covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let resid_factor = psd_factor(&resid_cov)?;
        let names = if names.is_empty() {
            (0..dim).map(|i| format!("series{i}")).collect()
        } else {
            names
        };
        Ok(VarModel {
            dim,
            names,
            intercept,
            coeff,
            resid_cov,
            resid_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn intercept(&self) -> &[f64] {
        &self.intercept
    }

    pub fn coeff(&self) -> &[Vec<f64>] {
        &self.coeff
    }

    pub fn resid_cov(&self) -> &[Vec<f64>] {
        &self.resid_cov
    }

    /// Lower-triangular `L` with `L Lᵀ = resid_cov`.
    pub fn resid_factor(&self) -> &[Vec<f64>] {
        &self.resid_factor
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Unconditional mean `(I - coeff)⁻¹ intercept`, if `I - coeff` is invertible.
    pub fn stationary_mean(&self) -> Option<Vec<f64>> {
        let a = DMatrix::from_fn(self.dim, self.dim, |i, j| {
            let eye = if i == j { 1.0 } else { 0.0 };
            eye - self.coeff[i][j]
        });
        let c = DVector::from_column_slice(&self.intercept);
        a.lu().solve(&c).map(|v| v.iter().copied().collect())
    }

    /// True when every eigenvalue of `coeff` lies strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let a = DMatrix::from_fn(self.dim, self.dim, |i, j| self.coeff[i][j]);
        a.complex_eigenvalues().iter().all(|l| l.norm() < 1.0)
    }

    /// One transition `intercept + coeff · prev + L · shocks`, written into `out`.
    pub fn step(&self, prev: &[f64], shocks: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let mut v = self.intercept[i];
            for j in 0..self.dim {
                v += self.coeff[i][j] * prev[j];
            }
            for (j, &e) in shocks.iter().enumerate().take(i + 1) {
                v += self.resid_factor[i][j] * e;
            }
            out[i] = v;
        }
    }
}

/// Estimate a VAR(1) by equation-wise least squares of `x_t` on `[1, x_{t-1}]`.
///
/// `log_returns` holds one row per observation. `names` may be empty.
pub fn calibrate_var(log_returns: &[Vec<f64>], names: &[String]) -> Result<VarModel> {
    let t_obs = log_returns.len();
    let dim = log_returns.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Input("no series to calibrate".into()));
    }
    if let Some((t, _)) = log_returns.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(Error::Input(format!("observation {t} has the wrong width")));
    }
    if t_obs < dim + 2 {
        return Err(Error::Input(format!(
            "need at least {} observations for a {dim}-series VAR(1), got {t_obs}",
            dim + 2
        )));
    }
    for (t, row) in log_returns.iter().enumerate() {
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value at observation {t}, series {i}"
            )));
        }
    }
    let series_name = |i: usize| {
        names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("series{i}"))
    };

    let rows = t_obs - 1;
    let k = dim + 1;
    let x = DMatrix::from_fn(rows, k, |t, j| {
        if j == 0 {
            1.0
        } else {
            log_returns[t][j - 1]
        }
    });
    let y = DMatrix::from_fn(rows, dim, |t, i| log_returns[t + 1][i]);
    let gram = x.transpose() * &x;

    // Locate the first regressor that is (numerically) a combination of the
    // ones before it; the lag of that series is what makes the system singular.
    if let Some(col) = first_dependent_column(&gram) {
        let series = if col == 0 {
            "intercept".to_string()
        } else {
            series_name(col - 1)
        };
        return Err(Error::Calibration {
            series,
            reason: "lagged regressor is collinear with the other regressors".into(),
        });
    }
    let chol = gram.clone().cholesky().ok_or_else(|| Error::Calibration {
        series: "all".into(),
        reason: "regressor cross-moment matrix is not positive definite".into(),
    })?;
    let beta = chol.solve(&(x.transpose() * &y));
    let resid = &y - &x * &beta;

    let dof = (t_obs as isize - 1 - k as isize).max(1) as f64;
    let cov = resid.transpose() * &resid / dof;

    let intercept = (0..dim).map(|i| beta[(0, i)]).collect();
    let coeff = (0..dim)
        .map(|i| (0..dim).map(|j| beta[(j + 1, i)]).collect())
        .collect();
    let resid_cov = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)]))
                .collect()
        })
        .collect();
    VarModel::new(names.to_vec(), intercept, coeff, resid_cov)
}

fn first_dependent_column(gram: &DMatrix<f64>) -> Option<usize> {
    let n = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let diag = gram[(j, j)];
        let mut d = diag;
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if diag <= 0.0 || d <= 1e-12 * diag {
            return Some(j);
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut v = gram[(i, j)];
            for p in 0..j {
                v -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    None
}

/// Cholesky-type factor of a symmetric positive semi-definite matrix.
///
/// Zero pivots produce zero columns, so singular covariances factor exactly.
/// A materially negative pivot triggers a diagonal jitter of
/// `1e-12 · trace / dim`, retried up to three times.
pub fn psd_factor(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = cov.len();
    let trace: f64 = (0..n).map(|i| cov[i][i]).sum();
    let jitter = JITTER_SCALE * trace.abs() / n.max(1) as f64;
    for attempt in 0..=JITTER_RETRIES {
        let shift = jitter * attempt as f64;
        if let Some(l) = semidefinite_cholesky(cov, shift) {
            return Ok(l);
        }
    }
    Err(Error::Input(
        "residual covariance is not positive semi-definite".into(),
    ))
}

fn semidefinite_cholesky(cov: &[Vec<f64>], shift: f64) -> Option<Vec<Vec<f64>>> {
    let n = cov.len();
    let scale = (0..n).map(|i| cov[i][i].abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = cov[j][j] + shift;
        for p in 0..j {
            d -= l[j][p] * l[j][p];
        }
        if d > tol {
            let ljj = d.sqrt();
            l[j][j] = ljj;
            for i in j + 1..n {
                let mut v = cov[i][j];
                for p in 0..j {
                    v -= l[i][p] * l[j][p];
                }
                l[i][j] = v / ljj;
            }
        } else if d >= -tol {
            // Zero pivot: the remainder of the column must vanish as well.
            for i in j + 1..n {
                let mut v = cov[i][j];
                for p in 0..j {
                    v -= l[i][p] * l[j][p];
                }
                if v.abs() > tol.max(f64::MIN_POSITIVE) * 1e3 {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use rand_distr::{Distribution, StandardNormal};

    fn reconstruct(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = l.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|p| l[i][p] * l[j][p]).sum())
                    .collect()
            })
            .collect()
    }

    fn simulate_var(coeff: &[Vec<f64>], intercept: &[f64], sd: f64, t: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = intercept.len();
        let mut rng = substream(seed, Purpose::Scratch, 0);
        let mut x = vec![0.0; d];
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            let next: Vec<f64> = (0..d)
                .map(|i| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    intercept[i] + (0..d).map(|j| coeff[i][j] * x[j]).sum::<f64>() + sd * e
                })
                .collect();
            x = next.clone();
            out.push(next);
        }
        out
    }

    #[test]
    fn noiseless_ar1_recovered_exactly() {
        let mut x = 1.0;
        let mut obs = vec![vec![x]];
        for _ in 1..100 {
            x = 0.5 * x + 0.1;
            obs.push(vec![x]);
        }
        let m = calibrate_var(&obs, &[]).unwrap();
        assert!((m.coeff()[0][0] - 0.5).abs() < 1e-9);
        assert!((m.intercept()[0] - 0.1).abs() < 1e-9);
        assert!(m.resid_cov()[0][0].abs() < 1e-20);
        assert!(m.resid_factor()[0][0].abs() < 1e-9);
    }

    #[test]
    fn recovers_known_coefficients() {
        let a = vec![vec![0.5, 0.1], vec![-0.2, 0.3]];
        let obs = simulate_var(&a, &[0.01, -0.02], 0.05, 100_000, 11);
        let m = calibrate_var(&obs, &[]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.coeff()[i][j] - a[i][j]).abs() < 0.02, "{i}{j}");
            }
        }
        assert!((m.resid_cov()[0][0] - 0.0025).abs() < 1e-4);
    }

    #[test]
    fn white_noise_has_no_dynamics() {
        let zero = vec![vec![0.0; 3]; 3];
        let obs = simulate_var(&zero, &[0.0; 3], 1.0, 100_000, 5);
        let m = calibrate_var(&obs, &[]).unwrap();
        assert!(m.coeff().iter().flatten().all(|c| c.abs() < 0.02));
    }

    #[test]
    fn constant_series_is_named() {
        let obs: Vec<Vec<f64>> = (0..50)
            .map(|t| vec![(t as f64 * 0.7).sin(), 0.3])
            .collect();
        let names = vec!["SPY".to_string(), "FLAT".to_string()];
        match calibrate_var(&obs, &names) {
            Err(Error::Calibration { series, .. }) => assert_eq!(series, "FLAT"),
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_short_inputs_rejected() {
        let obs = vec![vec![0.1], vec![f64::NAN], vec![0.2], vec![0.3]];
        assert!(matches!(calibrate_var(&obs, &[]), Err(Error::Input(_))));
        let short = vec![vec![0.1, 0.2], vec![0.3, 0.1], vec![0.0, 0.2]];
        assert!(matches!(calibrate_var(&short, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn factor_reconstructs_and_handles_singular() {
        let cov = vec![
            vec![4.0, 2.0, 0.4],
            vec![2.0, 2.0, 0.3],
            vec![0.4, 0.3, 1.0],
        ];
        let l = psd_factor(&cov).unwrap();
        let back = reconstruct(&l);
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - cov[i][j]).abs() < 1e-10);
                if j > i {
                    assert_eq!(l[i][j], 0.0);
                }
            }
        }
        // rank one
        let v = [1.0, -2.0, 0.5];
        let rank1: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| v[i] * v[j]).collect()).collect();
        let l = psd_factor(&rank1).unwrap();
        let back = reconstruct(&l);
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - rank1[i][j]).abs() < 1e-10);
            }
        }
        assert!(psd_factor(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
    }

    #[test]
    fn json_round_trip_and_stationary_mean() {
        let m = VarModel::new(
            vec!["a".into(), "b".into()],
            vec![0.1, 0.2],
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![vec![0.01, 0.0], vec![0.0, 0.02]],
        )
        .unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"dim\":2"));
        assert!(!s.contains("resid_factor"));
        let back: VarModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let mu = m.stationary_mean().unwrap();
        assert!((mu[0] - 0.2).abs() < 1e-12 && (mu[1] - 0.4).abs() < 1e-12);
        assert!(m.is_stable());
    }
}
