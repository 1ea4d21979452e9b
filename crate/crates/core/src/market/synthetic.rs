use super::{MarketSpec, VarModel};

/// Monthly bond/equity market with one mean-reverting return predictor.
///
/// The predictor loads on next-month equity and bond returns and is
/// negatively correlated with equity shocks. Stationary mean log-returns are
/// 0.40% (bond) and 0.75% (equity) per month. The same market is shipped as
/// `data/synthetic_market.json`.
pub fn synthetic_market() -> MarketSpec {
    let names = ["bond", "equity", "signal"].map(String::from).to_vec();
    let (vb, ve, vs) = (0.012, 0.045, 0.02);
    let (rho_be, rho_es) = (-0.1, -0.5);
    let coeff = vec![
        vec![0.05, 0.0, 0.02],
        vec![0.0, 0.05, 0.15],
        vec![0.0, 0.0, 0.6],
    ];
    let intercept = vec![0.004 * 0.95, 0.0075 * 0.95, 0.0];
    let resid_cov = vec![
        vec![vb * vb, rho_be * vb * ve, 0.0],
        vec![rho_be * vb * ve, ve * ve, rho_es * ve * vs],
        vec![0.0, rho_es * ve * vs, vs * vs],
    ];
    let model = VarModel::new(names, intercept, coeff, resid_cov).expect("valid synthetic VAR");
    MarketSpec::new(model, vec![0, 1], vec![100.0, 100.0]).expect("valid synthetic market")
}
