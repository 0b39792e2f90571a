//! Hedging drivers against deterministic-equivalent and hand-solved oracles.

use std::sync::Arc;

use stochdp::{gen, instances};
use stochdp_core::convexfn::Sampled1D;
use stochdp_core::extensive::solve_extensive;
use stochdp_core::hedging::{solve_alm, AlmMethod, AlmOptions, LossFn, MarketModel};
use stochdp_core::{AdaptedProcess, ConvexFn, ScenarioTree};

fn one_period(up: f64, down: f64, claims: [f64; 2]) -> MarketModel {
    let tree = Arc::new(ScenarioTree::stagewise(&[vec![0.5, 0.5]]).unwrap());
    let prices = AdaptedProcess::full(&tree, |id| vec![[1.0, up, down][id.0]]);
    let claim = AdaptedProcess::at_stage(&tree, 1, |id| claims[id.0 - 1]);
    MarketModel::new(tree, prices, claim).unwrap()
}

#[test]
fn quadratic_hedge_matches_the_hand_solution() {
    // E(c - xΔs)² = ½(1.5 - x)² + ½(x/2)², minimized at x = 1.2
    let m = one_period(2.0, 0.5, [1.5, 0.0]);
    let sol = solve_alm(&m, &LossFn::Quadratic { scale: 1.0 }, 0.0, &AlmOptions::default()).unwrap();
    assert_eq!(sol.method, AlmMethod::Quadratic);
    assert!((sol.value - 0.225).abs() <= 1e-12, "{}", sol.value);
    assert!((sol.positions[m.tree.root()][0] - 1.2).abs() <= 1e-12);
    let (fp, slot) = instances::quadratic_hedge_program(&m, 1.0).unwrap();
    let ext = solve_extensive(&fp).unwrap();
    assert!((ext.value - sol.value).abs() <= 1e-8);
    assert!((ext.point[slot[0].unwrap()] - 1.2).abs() <= 1e-8);
}

#[test]
fn nothing_to_hedge_on_a_martingale() {
    let m = one_period(2.0, 0.5, [0.0, 0.0]);
    // any position makes (u⁺)² positive in the state where it loses
    let loss = LossFn::PositivePower { p: 2.0 };
    let sol = solve_alm(&m, &loss, 0.0, &AlmOptions::default()).unwrap();
    assert!(sol.value.abs() <= 1e-9, "{}", sol.value);
    let martingale = one_period(1.5, 0.5, [0.0, 0.0]);
    let sol = solve_alm(&martingale, &LossFn::Quadratic { scale: 1.0 }, 0.0, &AlmOptions::default()).unwrap();
    assert!(sol.value.abs() <= 1e-12);
    assert!(sol.cash[martingale.tree.root()][0].abs() <= 1e-12);
}

/// Softplus plus `(u⁺)²`, sampled on a fine grid; piecewise linear, so the
/// extensive form solves it exactly as an LP.
fn kinked_loss() -> Sampled1D {
    let knots: Vec<f64> = (0..=80).map(|i| -10.0 + 0.25 * i as f64).collect();
    Sampled1D::from_fn(knots, |u| u.exp().ln_1p() + u.max(0.0).powi(2), true).unwrap()
}

#[test]
fn wealth_grid_driver_agrees_with_the_extensive_form() {
    let loss = kinked_loss();
    for seed in 0..4 {
        let m = gen::binomial_market(seed, 2);
        let opts = AlmOptions { grid_points: 4001, ..AlmOptions::default() };
        let grid = solve_alm(&m, &LossFn::Sampled(loss.clone()), 0.0, &opts).unwrap();
        assert_eq!(grid.method, AlmMethod::WealthGrid);
        let (fp, _) = instances::hedge_program(&m, &ConvexFn::Sampled1D(loss.clone()));
        let ext = solve_extensive(&fp).unwrap().value;
        // the grid policy is feasible and re-evaluated exactly, so it can only lose
        assert!(grid.value >= ext - 1e-9 * (1.0 + ext.abs()));
        let rel = (grid.value - ext).abs() / ext.abs().max(1e-12);
        assert!(rel <= 1e-4, "seed {seed}: grid {} vs extensive {ext} (rel {rel:e})", grid.value);
    }
}

#[test]
fn more_initial_wealth_never_hurts() {
    let loss = LossFn::Sampled(kinked_loss());
    for seed in 0..4 {
        let m = gen::binomial_market(seed, 2);
        let mut prev = f64::INFINITY;
        for w in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let v = solve_alm(&m, &loss, w, &AlmOptions::default()).unwrap().value;
            assert!(v <= prev + 1e-9 * (1.0 + prev.abs().min(1e9)), "seed {seed}, w {w}: {v} after {prev}");
            prev = v;
        }
    }
}
