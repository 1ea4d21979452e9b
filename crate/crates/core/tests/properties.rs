use lsmc_core::cost::{liquidity_cost, CostModel, Rebalance};
use lsmc_core::evaluation::cer;
use lsmc_core::grid::{in_admissible_set, refine_grid, ControlGrid};
use lsmc_core::market::draw_admissible_control;
use lsmc_core::regression::{basis_size, poly_features, ridge_least_squares};
use lsmc_core::rng::{substream, Purpose};
use lsmc_core::solver::{extract_control, MaximizerMode};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #[test]
    fn random_controls_are_admissible(d in 1usize..6, seed in any::<u64>()) {
        let mut rng = substream(seed, Purpose::Scratch, 0);
        for _ in 0..20 {
            let a = draw_admissible_control(d, &mut rng);
            prop_assert_eq!(a.len(), d);
            prop_assert!(a.iter().all(|&x| x >= 0.0) && a.iter().sum::<f64>() <= 1.0);
        }
    }

    #[test]
    fn liquidity_cost_grows_with_size_and_k(q in 1.0f64..1e6, f in 1.0f64..4.0, k in 0.0f64..1e-4, sell in any::<bool>()) {
        let s = if sell { -1.0 } else { 1.0 };
        let small = liquidity_cost(s * q, 100.0, 100.0, k).unwrap();
        let large = liquidity_cost(s * q * f, 100.0, 100.0, k).unwrap();
        let steeper = liquidity_cost(s * q, 100.0, 100.0, 2.0 * k).unwrap();
        prop_assert!(small >= 0.0);
        prop_assert!(large >= small);
        prop_assert!(steeper >= small);
    }

    #[test]
    fn costs_never_add_wealth(
        w in 0.1f64..1e7,
        a in 0.0f64..0.5,
        b in 0.0f64..0.5,
        r in -0.2f64..0.2,
        prev in 0.0f64..1e4,
    ) {
        let step = Rebalance {
            wealth: w,
            weights: &[a, b],
            prices: &[100.0, 40.0],
            next_returns: &[r, -r],
            rf: 0.004,
            prev_positions: &[prev, 0.0],
        };
        let on = CostModel::default().step_wealth(&step, 1e-8);
        let off = CostModel::disabled().step_wealth(&step, 1e-8);
        prop_assert!(on.wealth <= off.wealth);
    }

    #[test]
    fn refinement_points_stay_in_patch(d in 1usize..4, pick in any::<prop::sample::Index>(), level in 1u32..6) {
        let grid = ControlGrid::new(d, 0.25).unwrap();
        let center = grid.node(pick.index(grid.len())).to_vec();
        let patch = grid.local_patch(&center).unwrap();
        let pts = refine_grid(&center, 0.25, level, &patch);
        prop_assert!(pts.len() <= 2 * d + 1);
        prop_assert!(pts.contains(&center));
        for p in &pts {
            prop_assert!(patch.contains(p) && in_admissible_set(p));
        }
    }

    #[test]
    fn extraction_is_admissible_for_any_values(values in prop::collection::vec(-1.0f64..1.0, 15)) {
        let grid = ControlGrid::new(2, 0.25).unwrap();
        for mode in [MaximizerMode::GridOnly, MaximizerMode::LocalAdaptive, MaximizerMode::GlobalAdaptive(3)] {
            let c = extract_control(&values, &grid, mode, 5).unwrap();
            prop_assert!(in_admissible_set(&c.alpha));
            prop_assert!(c.trace.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(c.evaluations <= 5 * 4);
        }
    }

    #[test]
    fn ridge_shrinks_monotonically(seed in any::<u64>(), l1 in 0.0f64..5.0, dl in 0.0f64..5.0) {
        let mut rng = substream(seed, Purpose::Scratch, 1);
        use rand::Rng;
        let x = DMatrix::from_fn(20, 4, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let y = DVector::from_fn(20, |_, _| rng.random::<f64>());
        let a = ridge_least_squares(&x, &y, l1).diagnostics.penalized_norm;
        let b = ridge_least_squares(&x, &y, l1 + dl).diagnostics.penalized_norm;
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn feature_count_is_binomial(n in 1usize..6, deg in 1u32..5) {
        let x = vec![0.5; n];
        prop_assert_eq!(poly_features(&x, deg).len(), basis_size(n, deg));
    }

    #[test]
    fn cer_ignores_risk_aversion_without_risk(w in 0.5f64..2.0, g1 in 0.5f64..20.0, g2 in 0.5f64..20.0, t in 1usize..13) {
        prop_assume!((g1 - 1.0).abs() > 1e-6 && (g2 - 1.0).abs() > 1e-6);
        let sample = vec![w; 5];
        let a = cer(&sample, g1, t).unwrap();
        let b = cer(&sample, g2, t).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
    }
}
