//! Seeded random instances. The same seed always yields the same instance.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochdp_core::control::{ControlSystem, LqCosts};
use stochdp_core::convexfn::ConvexFn;
use stochdp_core::hedging::MarketModel;
use stochdp_core::lagrange::LagrangeInstance;
use stochdp_core::{AdaptedProcess, NodeId, ScenarioTree};

use crate::format::{rows_of, Entry, FnRecord, ProblemHeader, ProblemKind, TreeFile};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Tree with `branching(stage)` children per node and random branch probabilities.
pub fn random_tree(rng: &mut ChaCha8Rng, horizon: usize, mut branching: impl FnMut(&mut ChaCha8Rng, usize) -> usize) -> ScenarioTree {
    let mut parents = vec![None];
    let mut pr = vec![1.0];
    let mut layer = vec![0usize];
    for t in 0..horizon {
        let mut next = Vec::new();
        for &p in &layer {
            let k = branching(rng, t).max(1);
            for q in probs(rng, k) {
                parents.push(Some(p));
                pr.push(q);
                next.push(parents.len() - 1);
            }
        }
        layer = next;
    }
    ScenarioTree::from_parents(&parents, &pr).expect("generated tree is valid")
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

fn header(kind: ProblemKind, dims: Vec<usize>) -> Option<ProblemHeader> {
    Some(ProblemHeader { kind, dims })
}

/// Strictly convex quadratic `K_t` over `(x_t, Δx_t)` on an equiprobable-free
/// `branching`-ary tree.
pub fn quadratic_lagrange(seed: u64, horizon: usize, branching: usize, dim: usize) -> LagrangeInstance {
    let mut rng = rng(seed);
    let tree = Arc::new(random_tree(&mut rng, horizon, |_, _| branching));
    let k = tree
        .nodes()
        .map(|_| {
            let q = spd(&mut rng, 2 * dim, 0.1);
            let lin = DVector::from_fn(2 * dim, |_, _| rng.gen_range(-1.0..1.0));
            ConvexFn::quadratic(q, lin, 0.0).expect("spd")
        })
        .collect();
    LagrangeInstance::new(tree, dim, k).expect("dimensions agree")
}

pub fn lagrange_file(inst: &LagrangeInstance) -> TreeFile {
    TreeFile::from_tree(&inst.tree, header(ProblemKind::Lagrange, vec![inst.dim]), |id| {
        BTreeMap::from([("K".to_string(), Entry::Function(FnRecord::from_convex(&inst.k[id.0])))])
    })
}

/// LQ system with `R ≻ 0`, PSD `Q`, random shocks and a fixed initial state.
pub fn lq_control(seed: u64, horizon: usize, branching: usize, n: usize, m: usize) -> (ControlSystem, LqCosts) {
    let mut rng = rng(seed);
    let tree = Arc::new(random_tree(&mut rng, horizon, |_, _| branching));
    let len = tree.len();
    let a = (0..len).map(|_| random_matrix(&mut rng, n, n, 0.3)).collect();
    let b = (0..len).map(|_| random_matrix(&mut rng, n, m, 1.0)).collect();
    let w = (0..len).map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let q = (0..len)
        .map(|_| {
            let f = random_matrix(&mut rng, n, n, 1.0);
            &f * f.transpose()
        })
        .collect();
    let r = (0..len).map(|_| spd(&mut rng, m, 0.5)).collect();
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let sys = ControlSystem::new(tree, n, m, a, b, w).expect("dimensions agree").with_initial_state(x0);
    (sys, LqCosts { q, r })
}

pub fn control_file(sys: &ControlSystem, costs: &LqCosts) -> TreeFile {
    TreeFile::from_tree(&sys.tree, header(ProblemKind::Control, vec![]), |id| {
        let i = id.0;
        let mut d = BTreeMap::from([
            ("A".to_string(), Entry::Matrix(rows_of(&sys.a[i]))),
            ("B".to_string(), Entry::Matrix(rows_of(&sys.b[i]))),
            ("W".to_string(), Entry::Vector(sys.w[i].iter().copied().collect())),
            ("Q".to_string(), Entry::Matrix(rows_of(&costs.q[i]))),
            ("R".to_string(), Entry::Matrix(rows_of(&costs.r[i]))),
        ]);
        if let (Some(x0), 0) = (&sys.initial_state, i) {
            d.insert("X0".to_string(), Entry::Vector(x0.iter().copied().collect()));
        }
        d
    })
}

/// One-asset binomial market with node-dependent factors `d < 1 < u` (so it is
/// arbitrage-free) and a call claim `(s_T - 1)⁺`.
pub fn binomial_market(seed: u64, horizon: usize) -> MarketModel {
    let mut rng = rng(seed);
    let tree = Arc::new(random_tree(&mut rng, horizon, |_, _| 2));
    let mut s = vec![1.0f64; tree.len()];
    for id in tree.nodes().filter(|&id| !tree.is_leaf(id)) {
        let (u, d) = (rng.gen_range(1.05..1.5), rng.gen_range(0.6..0.95));
        let kids = tree.children(id);
        s[kids[0].0] = s[id.0] * u;
        s[kids[1].0] = s[id.0] * d;
    }
    let prices = AdaptedProcess::full(&tree, |id| vec![s[id.0]]);
    let claim = AdaptedProcess::at_stage(&tree, horizon, |id| (s[id.0] - 1.0f64).max(0.0));
    MarketModel::new(tree, prices, claim).expect("positive prices")
}

/// Multi-asset market with arbitrary positive prices (may or may not admit arbitrage).
pub fn random_market(rng: &mut ChaCha8Rng, horizon: usize, branching: usize, assets: usize) -> MarketModel {
    let tree = Arc::new(random_tree(rng, horizon, |_, _| branching));
    let mut s = vec![vec![1.0; assets]; tree.len()];
    for id in tree.nodes().skip(1) {
        let p = tree.parent(id).unwrap();
        s[id.0] = s[p.0].iter().map(|v| v * rng.gen_range(0.7..1.4)).collect();
    }
    let prices = AdaptedProcess::full(&tree, |id| s[id.0].clone());
    let claim = AdaptedProcess::at_stage(&tree, horizon, |_| 0.0);
    MarketModel::new(tree, prices, claim).expect("positive prices")
}

pub fn market_file(m: &MarketModel) -> TreeFile {
    let tree = &m.tree;
    TreeFile::from_tree(tree, header(ProblemKind::Hedge, vec![]), |id| {
        let mut d = BTreeMap::from([("s".to_string(), Entry::Vector(m.prices[id].clone()))]);
        if tree.is_leaf(id) {
            d.insert("c".to_string(), Entry::Scalar(m.claim[id]));
        } else if !m.constraints[id.0].rows.is_empty() {
            let rows = m.constraints[id.0]
                .rows
                .iter()
                .map(|r| r.coef.iter().copied().chain([r.rhs]).collect())
                .collect();
            d.insert("D".to_string(), Entry::Matrix(rows));
        }
        d
    })
}

/// Random tree (per-node branching in `1..=max_branching`) with rewards in `[-1, 2)`.
pub fn reward_tree(seed: u64, horizon: usize, max_branching: usize) -> (Arc<ScenarioTree>, AdaptedProcess<f64>) {
    let mut rng = rng(seed);
    let tree = Arc::new(random_tree(&mut rng, horizon, |r, _| r.gen_range(1..=max_branching)));
    let reward = AdaptedProcess::full(&tree, |_| rng.gen_range(-1.0..2.0));
    (tree, reward)
}

/// Random walk with stagewise i.i.d. steps; `R_t = a_t·level + b_t` with
/// `a_t > 0`, so `R` is Markov.
pub fn markov_reward_tree(seed: u64, horizon: usize, branching: usize) -> (Arc<ScenarioTree>, AdaptedProcess<f64>) {
    let mut rng = rng(seed);
    let steps: Vec<Vec<f64>> = (0..horizon).map(|_| (0..branching).map(|_| f64::from(rng.gen_range(-2i32..=2))).collect()).collect();
    let branch_probs: Vec<Vec<f64>> = (0..horizon).map(|_| probs(&mut rng, branching)).collect();
    let tree = Arc::new(ScenarioTree::stagewise(&branch_probs).expect("valid"));
    let coef: Vec<(f64, f64)> = (0..=horizon).map(|_| (rng.gen_range(0.5..1.5), rng.gen_range(-1.0..1.0))).collect();
    let mut level = vec![0.0; tree.len()];
    for id in tree.nodes().skip(1) {
        let p = tree.parent(id).unwrap();
        let k = tree.children(p).iter().position(|&c| c == id).unwrap();
        level[id.0] = level[p.0] + steps[tree.stage(p)][k];
    }
    let reward = AdaptedProcess::full(&tree, |id| {
        let (a, b) = coef[tree.stage(id)];
        a * level[id.0] + b
    });
    (tree, reward)
}

pub fn reward_file(tree: &ScenarioTree, reward: &AdaptedProcess<f64>) -> TreeFile {
    TreeFile::from_tree(tree, header(ProblemKind::Stopping, vec![]), |id: NodeId| {
        BTreeMap::from([("R".to_string(), Entry::Scalar(reward[id]))])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_deterministic() {
        let a = lagrange_file(&quadratic_lagrange(7, 2, 2, 2)).to_json();
        let b = lagrange_file(&quadratic_lagrange(7, 2, 2, 2)).to_json();
        let c = lagrange_file(&quadratic_lagrange(8, 2, 2, 2)).to_json();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn markov_generator_is_markov() {
        for seed in 0..5 {
            let (tree, r) = markov_reward_tree(seed, 3, 2);
            assert!(stochdp_core::tree::is_markov(&tree, &r));
        }
    }

    #[test]
    fn binomial_markets_pass_na() {
        for seed in 0..5 {
            assert!(stochdp_core::hedging::na_check(&binomial_market(seed, 2)).unwrap().pass);
        }
    }
}
