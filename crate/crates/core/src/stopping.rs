//! Optimal stopping: Snell envelope, canonical stopping rule, the linear
//! relaxation run through the Bellman engine, and a brute-force enumerator.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::bellman::{solve_be, BellmanSolution, StageProblem};
use crate::convexfn::{ConvexFn, Halfspace, Piece, Polyhedral};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::tree::{markov_witness, AdaptedProcess, NodeId, ScenarioTree};

/// Default node cap for [`enumerate_stopping_times`].
pub const ENUMERATION_CAP: usize = 63;

/// `E_t S_{t+1}` at every node, zero at the leaves (`S_{T+1} = 0`).
fn continuation<S: Scalar>(tree: &ScenarioTree, snell: &[S], id: NodeId) -> S {
    tree.children(id).iter().fold(S::zero(), |acc, &c| acc + S::branch_prob(tree, c) * snell[c.0].clone())
}

/// `S_t = max(R_t, E_t S_{t+1})` with `S_{T+1} = 0`.
pub fn snell<S: Scalar>(tree: &ScenarioTree, reward: &AdaptedProcess<S>) -> AdaptedProcess<S> {
    let mut s: Vec<S> = vec![S::zero(); tree.len()];
    for id in tree.nodes().rev() {
        let cont = continuation(tree, &s, id);
        let r = reward[id].clone();
        s[id.0] = if r > cont { r } else { cont };
    }
    AdaptedProcess::full(tree, |id| s[id.0].clone())
}

/// Per-node stop flags; a flag below a stopped node is meaningless and kept false.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoppingTime {
    pub stop: Vec<bool>,
}

impl StoppingTime {
    pub fn never(tree: &ScenarioTree) -> Self {
        StoppingTime { stop: vec![false; tree.len()] }
    }

    pub fn stops_at(&self, id: NodeId) -> bool {
        self.stop[id.0]
    }

    /// Nodes where the rule stops.
    pub fn stop_set(&self) -> Vec<NodeId> {
        (0..self.stop.len()).filter(|&i| self.stop[i]).map(NodeId).collect()
    }

    /// `τ` along the path to `leaf` (`T + 1` when never stopped).
    pub fn tau(&self, tree: &ScenarioTree, leaf: NodeId) -> usize {
        tree.path(leaf).into_iter().find(|&n| self.stop[n.0]).map_or(tree.horizon() + 1, |n| tree.stage(n))
    }

    /// No stop below another stop.
    pub fn is_consistent(&self, tree: &ScenarioTree) -> bool {
        tree.nodes().all(|id| !self.stop[id.0] || tree.path(id).iter().rev().skip(1).all(|a| !self.stop[a.0]))
    }

    /// `E R_τ`.
    pub fn value(&self, tree: &ScenarioTree, reward: &AdaptedProcess<f64>) -> f64 {
        self.stop_set().into_iter().map(|n| tree.uncond_prob(n) * reward[n]).sum()
    }

    /// Indicator process `x_t = 1{τ = t}`.
    pub fn indicator(&self, tree: &ScenarioTree) -> AdaptedProcess<f64> {
        AdaptedProcess::full(tree, |id| if self.stop[id.0] { 1.0 } else { 0.0 })
    }
}

/// Earliest rule stopping where `R = S`.
pub fn optimal_stop(tree: &ScenarioTree, reward: &AdaptedProcess<f64>, snell: &AdaptedProcess<f64>) -> StoppingTime {
    let mut out = StoppingTime::never(tree);
    let mut stopped = vec![false; tree.len()];
    for id in tree.nodes() {
        let above = tree.parent(id).is_some_and(|p| stopped[p.0]);
        if above {
            stopped[id.0] = true;
        } else if reward[id] >= snell[id] {
            out.stop[id.0] = true;
            stopped[id.0] = true;
        }
    }
    out
}

/// Optimality test: while running, stop where `R_t > E_t S_{t+1}` is forbidden
/// to be skipped and continuing where `R_t < E_t S_{t+1}` is forbidden to be cut.
pub fn is_optimal_stop(tree: &ScenarioTree, reward: &AdaptedProcess<f64>, snell: &AdaptedProcess<f64>, tau: &StoppingTime, tol: f64) -> bool {
    let s: Vec<f64> = tree.nodes().map(|id| snell[id]).collect();
    let mut stopped = vec![false; tree.len()];
    for id in tree.nodes() {
        if tree.parent(id).is_some_and(|p| stopped[p.0]) {
            stopped[id.0] = true;
            continue;
        }
        let gap = reward[id] - continuation(tree, &s, id);
        if tau.stop[id.0] {
            if gap < -tol {
                return false;
            }
            stopped[id.0] = true;
        } else if gap > tol {
            return false;
        }
    }
    true
}

/// Largest horizon the relaxation accepts (one decision per stage).
pub const ROS_MAX_HORIZON: usize = crate::bellman::MAX_GENERAL_DIM - 1;

/// The relaxed problem `min -E Σ R_t x_t` over `x >= 0`, `Σ x_t <= 1`, as a
/// general-mode problem with the whole integrand on the leaves.
pub fn ros_problem(tree: Arc<ScenarioTree>, reward: &AdaptedProcess<f64>) -> Result<StageProblem> {
    let horizon = tree.horizon();
    if horizon > ROS_MAX_HORIZON {
        return Err(Error::InvalidInput(format!("relaxation supports horizons up to {ROS_MAX_HORIZON}")));
    }
    let dim = horizon + 1;
    let mut rows: Vec<Halfspace> = (0..dim)
        .map(|i| {
            let mut c = vec![0.0; dim];
            c[i] = -1.0;
            Halfspace::new(c, 0.0)
        })
        .collect();
    rows.push(Halfspace::new(vec![1.0; dim], 1.0));
    let terms = tree
        .nodes()
        .map(|id| {
            if !tree.is_leaf(id) {
                return Ok(None);
            }
            let grad = tree.path(id).iter().map(|&n| -reward[n]).collect();
            Ok(Some(ConvexFn::Polyhedral(Polyhedral::new(dim, vec![Piece::new(grad, 0.0)], rows.clone())?)))
        })
        .collect::<Result<Vec<_>>>()?;
    StageProblem::general(tree, vec![1; dim], terms)
}

/// Relaxation solved by the generic engine; its optimum value is `-E S_0`.
pub fn ros_as_bellman(tree: Arc<ScenarioTree>, reward: &AdaptedProcess<f64>) -> Result<BellmanSolution> {
    solve_be(&ros_problem(tree, reward)?)
}

/// Extreme-point policy from the relaxation: at every node take either nothing
/// or all of the remaining mass, whichever the nodal function prefers (ties: nothing).
pub fn ros_extreme_policy(sol: &BellmanSolution) -> Result<AdaptedProcess<f64>> {
    let tree = sol.tree();
    let mut x = vec![0.0; tree.len()];
    for id in tree.nodes() {
        let history: Vec<f64> = tree.path(id).iter().rev().skip(1).rev().map(|n| x[n.0]).collect();
        let remaining = 1.0 - history.iter().sum::<f64>();
        let nodal = &sol.node(id).nodal;
        let at = |v: f64| {
            let mut h = history.clone();
            h.push(v);
            nodal.eval(&h)
        };
        let (idle, full) = (at(0.0)?, at(remaining)?);
        x[id.0] = if full < idle - 1e-12 * (1.0 + idle.abs()) { remaining } else { 0.0 };
    }
    Ok(AdaptedProcess::full(tree, |id| x[id.0]))
}

/// `h_t` of the relaxation in closed form:
/// `-Σ R_s x_s - E_t[S_{t+1}](1 - Σ x_s)` on the simplex, `+inf` elsewhere.
pub fn ros_closed_form(tree: &ScenarioTree, reward: &AdaptedProcess<f64>, snell: &AdaptedProcess<f64>, id: NodeId, x: &[f64]) -> f64 {
    let s: Vec<f64> = tree.nodes().map(|n| snell[n]).collect();
    let path = tree.path(id);
    let mass: f64 = x.iter().sum();
    if x.iter().any(|v| *v < -1e-12) || mass > 1.0 + 1e-12 {
        return f64::INFINITY;
    }
    let gain: f64 = path.iter().zip(x).map(|(&n, v)| reward[n] * v).sum();
    -gain - continuation(tree, &s, id) * (1.0 - mass)
}

/// Number of consistent stopping rules: `1 + Π children` per node, 2 per leaf.
pub fn count_stopping_times(tree: &ScenarioTree) -> u128 {
    let mut count = vec![0u128; tree.len()];
    for id in tree.nodes().rev() {
        let below = tree.children(id).iter().fold(1u128, |acc, c| acc.saturating_mul(count[c.0]));
        count[id.0] = below.saturating_add(1);
    }
    count[0]
}

/// Every consistent stopping rule exactly once (odometer over active nodes).
pub fn enumerate_stopping_times(tree: &ScenarioTree, cap: usize) -> Result<StoppingTimes<'_>> {
    if tree.len() > cap {
        return Err(Error::TreeTooLarge { nodes: tree.len(), cap });
    }
    Ok(StoppingTimes { tree, state: Some(StoppingTime::never(tree)) })
}

pub struct StoppingTimes<'a> {
    tree: &'a ScenarioTree,
    state: Option<StoppingTime>,
}

impl StoppingTimes<'_> {
    fn active(&self, st: &StoppingTime, id: NodeId) -> bool {
        let mut cur = self.tree.parent(id);
        while let Some(p) = cur {
            if st.stop[p.0] {
                return false;
            }
            cur = self.tree.parent(p);
        }
        true
    }
}

impl Iterator for StoppingTimes<'_> {
    type Item = StoppingTime;

    fn next(&mut self) -> Option<StoppingTime> {
        let current = self.state.take()?;
        let mut next = current.clone();
        // least significant digit = last active node in breadth-first order
        let mut carry = true;
        for id in self.tree.nodes().rev() {
            if !self.active(&next, id) {
                continue;
            }
            if next.stop[id.0] {
                next.stop[id.0] = false;
            } else {
                next.stop[id.0] = true;
                carry = false;
                break;
            }
        }
        if !carry {
            self.state = Some(next);
        }
        Some(current)
    }
}

/// Per-stage table `R_t -> S_t` for a Markov reward.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovTables {
    /// `(r, ψ_t(r))` sorted by `r`, one table per stage
    pub psi: Vec<Vec<(f64, f64)>>,
}

pub fn markov_check(tree: &ScenarioTree, reward: &AdaptedProcess<f64>) -> Result<MarkovTables> {
    if let Some((stage, first, second)) = markov_witness(tree, reward) {
        return Err(Error::NotMarkov { stage, first, second });
    }
    let s = snell(tree, reward);
    let tol = 1e-12;
    let mut psi = Vec::new();
    for t in 0..=tree.horizon() {
        let mut table: Vec<(f64, f64, NodeId)> = Vec::new();
        for id in tree.stage_nodes(t) {
            match table.iter().find(|e| (e.0 - reward[id]).abs() <= tol) {
                Some(e) if (e.1 - s[id]).abs() > tol * (1.0 + e.1.abs()) => {
                    return Err(Error::NotMarkov { stage: t, first: e.2, second: id });
                }
                Some(_) => {}
                None => table.push((reward[id], s[id], id)),
            }
        }
        table.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        psi.push(table.into_iter().map(|(r, v, _)| (r, v)).collect());
    }
    Ok(MarkovTables { psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::ratio;
    use num_rational::BigRational;

    fn two_stage() -> (ScenarioTree, AdaptedProcess<f64>) {
        let tree = ScenarioTree::stagewise(&[vec![0.5, 0.5]]).unwrap();
        let r = AdaptedProcess::full(&tree, |id| [1.0, 0.0, 3.0][id.0]);
        (tree, r)
    }

    #[test]
    fn hand_instance() {
        let (tree, r) = two_stage();
        let s = snell(&tree, &r);
        assert_eq!((s[NodeId(0)], s[NodeId(1)], s[NodeId(2)]), (1.5, 0.0, 3.0));
        let tau = optimal_stop(&tree, &r, &s);
        assert!(!tau.stops_at(NodeId(0)) && tau.stops_at(NodeId(2)));
        assert!((tau.value(&tree, &r) - 1.5).abs() < 1e-15);
        assert!(is_optimal_stop(&tree, &r, &s, &tau, 1e-12));
    }

    #[test]
    fn constant_and_negative_rewards() {
        let tree = ScenarioTree::uniform(2, 2);
        let c = AdaptedProcess::full(&tree, |_| 2.5);
        let s = snell(&tree, &c);
        assert!(s.iter().all(|(_, v)| *v == 2.5));
        let tau = optimal_stop(&tree, &c, &s);
        assert_eq!(tau.stop_set(), vec![NodeId(0)]);
        let neg = AdaptedProcess::full(&tree, |id| -1.0 - id.0 as f64);
        let s = snell(&tree, &neg);
        assert!(s.iter().all(|(_, v)| *v == 0.0));
        assert!(optimal_stop(&tree, &neg, &s).stop_set().is_empty());
    }

    #[test]
    fn exact_snell() {
        let raw = [("r", None, "1", 0), ("a", Some("r"), "1/3", 1), ("b", Some("r"), "2/3", 1)];
        let nodes: Vec<_> = raw
            .iter()
            .map(|(id, p, q, t)| {
                let mut n = crate::tree::RawNode::new(*id, *p, 0.0, *t);
                let e = crate::num::parse_rational(q).unwrap();
                n.prob = Scalar::to_f64(&e);
                n.exact_prob = Some(e);
                n
            })
            .collect();
        let tree = crate::tree::validate_tree(&nodes).unwrap();
        let r: AdaptedProcess<BigRational> = AdaptedProcess::full(&tree, |id| ratio([1, 0, 2][id.0], 1));
        let s = snell(&tree, &r);
        assert_eq!(s[NodeId(0)], ratio(4, 3));
    }

    #[test]
    fn never_stopping_meets_r_equals_s_but_is_not_optimal() {
        let tree = ScenarioTree::stagewise(&[]).unwrap();
        let r = AdaptedProcess::full(&tree, |_| 1.0);
        let s = snell(&tree, &r);
        assert!(!is_optimal_stop(&tree, &r, &s, &StoppingTime::never(&tree), 1e-12));
    }

    #[test]
    fn enumeration_counts() {
        let one = ScenarioTree::stagewise(&[]).unwrap();
        assert_eq!(enumerate_stopping_times(&one, ENUMERATION_CAP).unwrap().count(), 2);
        let bin = ScenarioTree::uniform(1, 2);
        let all: Vec<_> = enumerate_stopping_times(&bin, ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all.len(), 5);
        assert!(all.iter().all(|s| s.is_consistent(&bin)));
        let mut dedup = all.clone();
        dedup.sort_by(|a, b| a.stop.cmp(&b.stop));
        dedup.dedup();
        assert_eq!(dedup.len(), 5);
        for n in 1..6 {
            let chain = ScenarioTree::uniform(n - 1, 1);
            assert_eq!(enumerate_stopping_times(&chain, ENUMERATION_CAP).unwrap().count() as u128, count_stopping_times(&chain));
            assert_eq!(count_stopping_times(&chain), n as u128 + 1);
        }
        let big = ScenarioTree::uniform(6, 2);
        assert!(matches!(enumerate_stopping_times(&big, ENUMERATION_CAP), Err(Error::TreeTooLarge { .. })));
    }

    #[test]
    fn relaxation_matches_snell_and_closed_form() {
        let (tree, r) = two_stage();
        let tree = Arc::new(tree);
        let s = snell(&tree, &r);
        let sol = ros_as_bellman(tree.clone(), &r).unwrap();
        assert!((-sol.value() - 1.5).abs() < 1e-10);
        for id in tree.nodes() {
            let t = tree.stage(id);
            for probe in [[0.0, 0.0], [0.2, 0.3], [0.5, 0.5], [1.0, 0.0]] {
                let x = &probe[..=t];
                let got = sol.node(id).value.eval(x).unwrap();
                let want = ros_closed_form(&tree, &r, &s, id, x);
                assert!((got - want).abs() < 1e-10, "{id} {x:?}: {got} vs {want}");
            }
        }
        let x = ros_extreme_policy(&sol).unwrap();
        assert_eq!((x[NodeId(0)], x[NodeId(1)], x[NodeId(2)]), (0.0, 0.0, 1.0));
    }

    #[test]
    fn markov_tables() {
        // recombining: stage-1 values distinct, stage-2 values repeat
        let tree = ScenarioTree::uniform(2, 2);
        let vals = [1.0, 2.0, 0.5, 3.0, 1.0, 1.0, 0.0];
        let r = AdaptedProcess::full(&tree, |id| vals[id.0]);
        let tables = markov_check(&tree, &r).unwrap();
        assert_eq!(tables.psi[2].len(), 3);
        let path_dep = AdaptedProcess::full(&tree, |id| [1.0, 2.0, 2.0, 3.0, 1.0, 0.0, 5.0][id.0]);
        assert!(matches!(markov_check(&tree, &path_dep), Err(Error::NotMarkov { .. })));
    }
}
