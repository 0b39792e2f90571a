//! Control-form recursion: value functions of the state only.
//!
//! System `X_t = (I + A_t) X_{t-1} + B_t U_{t-1} + W_t` with data attached to
//! the node where it becomes known. `J` lives on states, `I` and `Q` on
//! state-control pairs.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::bellman::StageProblem;
use crate::convexfn::{weighted_sum, ConvexFn, LinealitySpace, Quadratic, RecessionPolicy, Selector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tree::{AdaptedProcess, NodeId, ScenarioTree};

#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub tree: Arc<ScenarioTree>,
    pub state_dim: usize,
    pub control_dim: usize,
    /// per node; the root's entries are unused
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub w: Vec<DVector<f64>>,
    /// fixed `X_0`; free when `None`
    pub initial_state: Option<DVector<f64>>,
}

impl ControlSystem {
    pub fn new(
        tree: Arc<ScenarioTree>,
        state_dim: usize,
        control_dim: usize,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        w: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = tree.len();
        if a.len() != n || b.len() != n || w.len() != n {
            return Err(Error::InvalidInput(format!("system data must have one entry per node ({n})")));
        }
        for i in 0..n {
            if a[i].shape() != (state_dim, state_dim) {
                return Err(Error::DimensionMismatch { expected: state_dim, found: a[i].nrows() });
            }
            if b[i].shape() != (state_dim, control_dim) {
                return Err(Error::DimensionMismatch { expected: control_dim, found: b[i].ncols() });
            }
            if w[i].len() != state_dim {
                return Err(Error::DimensionMismatch { expected: state_dim, found: w[i].len() });
            }
        }
        Ok(ControlSystem { tree, state_dim, control_dim, a, b, w, initial_state: None })
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Self {
        self.initial_state = Some(x0);
        self
    }

    /// `[I + A, B]` and `W` of node `id`: the map `(X_{t-1}, U_{t-1}) -> X_t`.
    pub fn transition(&self, id: NodeId) -> (DMatrix<f64>, DVector<f64>) {
        let (n, m) = (self.state_dim, self.control_dim);
        let mut map = DMatrix::zeros(n, n + m);
        map.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) + &self.a[id.0]));
        map.view_mut((0, n), (n, m)).copy_from(&self.b[id.0]);
        (map, self.w[id.0].clone())
    }
}

#[derive(Debug, Clone)]
pub struct ValueFns {
    /// `J_t` over states
    pub j: Vec<ConvexFn>,
    /// `I_t(X_{t-1}, U_{t-1}) = J_t((I + A_t) X + B_t U + W_t)`, `None` at the root
    pub i: Vec<Option<ConvexFn>>,
    /// `Q_t = E_t(L_t + I_{t+1})` over `(X_t, U_t)`
    pub q: Vec<ConvexFn>,
    pub selectors: Vec<Selector>,
    pub lineality: Vec<LinealitySpace>,
    /// zero-cost control directions form a linear space at every node
    pub linear: Vec<bool>,
}

fn check_costs(sys: &ControlSystem, costs: &[ConvexFn]) -> Result<()> {
    if costs.len() != sys.tree.len() {
        return Err(Error::InvalidInput(format!("expected {} node costs, got {}", sys.tree.len(), costs.len())));
    }
    let d = sys.state_dim + sys.control_dim;
    for c in costs {
        if c.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: c.dim() });
        }
    }
    Ok(())
}

/// Backward sweep `J_t(X) = inf_U E_t(L_t + I_{t+1})(X, U)`.
pub fn solve_oc(sys: &ControlSystem, costs: &[ConvexFn]) -> Result<ValueFns> {
    solve_oc_with(sys, costs, RecessionPolicy::Strict)
}

pub fn solve_oc_with(sys: &ControlSystem, costs: &[ConvexFn], policy: RecessionPolicy) -> Result<ValueFns> {
    check_costs(sys, costs)?;
    let tree = sys.tree.clone();
    let m = sys.control_dim;
    type Slot = Option<(ConvexFn, Option<ConvexFn>, ConvexFn, Selector, LinealitySpace, bool)>;
    let mut slots: Vec<Slot> = vec![None; tree.len()];
    for t in (0..=tree.horizon()).rev() {
        let ids: Vec<usize> = tree.stage_range(t).collect();
        let done = {
            let slots = &slots;
            let tree = &tree;
            crate::par::try_map(&ids, |i| {
                let id = NodeId(i);
                let q = if tree.is_leaf(id) {
                    costs[i].clone()
                } else {
                    let kids: Vec<(f64, &ConvexFn)> = tree
                        .children(id)
                        .iter()
                        .map(|&c| (tree.prob(c), slots[c.0].as_ref().unwrap().1.as_ref().unwrap()))
                        .collect();
                    costs[i].add(&weighted_sum(&kids)?)?
                };
                let pm = q.partial_min_with(m, policy).map_err(|e| e.at_node(id))?;
                let j = pm.value;
                let inflow = match tree.parent(id) {
                    Some(_) => {
                        let (map, w) = sys.transition(id);
                        Some(j.compose_affine(&map, &w)?)
                    }
                    None => None,
                };
                Ok((j, inflow, q, pm.selector, pm.lineality, pm.linear))
            })?
        };
        for (i, s) in ids.into_iter().zip(done) {
            slots[i] = Some(s);
        }
    }
    let mut vf = ValueFns { j: vec![], i: vec![], q: vec![], selectors: vec![], lineality: vec![], linear: vec![] };
    for s in slots {
        let (j, i, q, sel, lin, linear) = s.unwrap();
        vf.j.push(j);
        vf.i.push(i);
        vf.q.push(q);
        vf.selectors.push(sel);
        vf.lineality.push(lin);
        vf.linear.push(linear);
    }
    Ok(vf)
}

/// `Q_t` per node; `J_t = inf_U Q_t(·, U)`.
pub fn q_factors(vf: &ValueFns) -> &[ConvexFn] {
    &vf.q
}

/// States and controls along the tree from the selectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    pub states: AdaptedProcess<Vec<f64>>,
    pub controls: AdaptedProcess<Vec<f64>>,
    pub value: f64,
}

/// Forward pass; `X_0` is the fixed initial state or a minimizer of `J_0`.
pub fn control_policy(sys: &ControlSystem, vf: &ValueFns) -> Result<ControlPath> {
    let tree = &sys.tree;
    let x0 = match &sys.initial_state {
        Some(x) => linalg::to_vec(x),
        None => vf.j[0].minimize()?.1,
    };
    let value = vf.j[0].eval(&x0)?;
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    let mut us: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    for id in tree.nodes() {
        let x = match tree.parent(id) {
            None => x0.clone(),
            Some(p) => {
                let (map, w) = sys.transition(id);
                let mut xu = xs[p.0].clone();
                xu.extend_from_slice(&us[p.0]);
                linalg::to_vec(&(map * DVector::from_vec(xu) + w))
            }
        };
        us[id.0] = vf.selectors[id.0].select(&x).map_err(|e| e.at_node(id))?;
        xs[id.0] = x;
    }
    Ok(ControlPath {
        states: AdaptedProcess::full(tree, |id| xs[id.0].clone()),
        controls: AdaptedProcess::full(tree, |id| us[id.0].clone()),
        value,
    })
}

/// The same problem for the generic engine, with decisions `(X_t, U_t)`:
/// `g(x_{t-1}, x_t) = L_t(X_t, U_t) + δ{X_t = (I + A_t) X_{t-1} + B_t U_{t-1} + W_t}`.
pub fn oc_as_stage_problem(sys: &ControlSystem, costs: &[ConvexFn]) -> Result<StageProblem> {
    check_costs(sys, costs)?;
    let tree = &sys.tree;
    let (n, m) = (sys.state_dim, sys.control_dim);
    let d = n + m;
    let mut out = Vec::with_capacity(tree.len());
    for id in tree.nodes() {
        let f = match tree.parent(id) {
            None => match &sys.initial_state {
                Some(x0) => {
                    let mut a = DMatrix::zeros(n, d);
                    a.view_mut((0, 0), (n, n)).fill_with_identity();
                    costs[id.0].add(&ConvexFn::Quadratic(Quadratic::zero(d).constrained(&a, x0)?))?
                }
                None => costs[id.0].clone(),
            },
            Some(_) => {
                let mut lift = DMatrix::zeros(d, 2 * d);
                lift.view_mut((0, d), (d, d)).fill_with_identity();
                let cost = costs[id.0].compose_affine(&lift, &DVector::zeros(d))?;
                let (map, w) = sys.transition(id);
                // X_t - [I + A, B](X_{t-1}, U_{t-1}) = W
                let mut a = DMatrix::zeros(n, 2 * d);
                a.view_mut((0, 0), (n, d)).copy_from(&(-map));
                a.view_mut((0, d), (n, n)).fill_with_identity();
                cost.add(&ConvexFn::Quadratic(Quadratic::zero(2 * d).constrained(&a, &w)?))?
            }
        };
        out.push(f);
    }
    StageProblem::stage_additive(tree.clone(), vec![d; tree.horizon() + 1], out)
}

/// Affine-quadratic value function `½ X'KX + g'X + c` per node with feedback `U = -ΛX - κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiData {
    pub k: Vec<DMatrix<f64>>,
    pub lambda: Vec<DMatrix<f64>>,
    /// feedback offset `κ`
    pub kappa: Vec<DVector<f64>>,
    pub linear: Vec<DVector<f64>>,
    pub offset: Vec<f64>,
}

impl RiccatiData {
    pub fn value_fn(&self, id: NodeId) -> Result<ConvexFn> {
        ConvexFn::quadratic(self.k[id.0].clone(), self.linear[id.0].clone(), self.offset[id.0])
    }

    /// `J_0(X_0)`.
    pub fn value_at(&self, x0: &DVector<f64>) -> f64 {
        0.5 * x0.dot(&(&self.k[0] * x0)) + self.linear[0].dot(x0) + self.offset[0]
    }
}

/// Per-node quadratic cost weights `L = ½X'QX + ½U'RU`.
#[derive(Debug, Clone)]
pub struct LqCosts {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

impl LqCosts {
    pub fn to_convex(&self, sys: &ControlSystem) -> Result<Vec<ConvexFn>> {
        let (n, m) = (sys.state_dim, sys.control_dim);
        self.q
            .iter()
            .zip(&self.r)
            .map(|(q, r)| {
                let mut h = DMatrix::zeros(n + m, n + m);
                h.view_mut((0, 0), (n, n)).copy_from(q);
                h.view_mut((n, n), (m, m)).copy_from(r);
                ConvexFn::quadratic(h, DVector::zeros(n + m), 0.0)
            })
            .collect()
    }
}

const SINGULAR_TOL: f64 = 1e-10;

/// Riccati recursion with every conditional expectation taken as an exact tree sum.
///
/// `cross_weight` scales the `G H⁻¹ G'` correction; `1.0` is the stationarity
/// solution, `0.5` reproduces the halved display for comparison only.
pub fn riccati_weighted(sys: &ControlSystem, costs: &LqCosts, cross_weight: f64) -> Result<RiccatiData> {
    let tree = &sys.tree;
    let (n, m) = (sys.state_dim, sys.control_dim);
    let len = tree.len();
    if costs.q.len() != len || costs.r.len() != len {
        return Err(Error::InvalidInput(format!("expected {len} cost matrices")));
    }
    let mut out = RiccatiData {
        k: vec![DMatrix::zeros(n, n); len],
        lambda: vec![DMatrix::zeros(m, n); len],
        kappa: vec![DVector::zeros(m); len],
        linear: vec![DVector::zeros(n); len],
        offset: vec![0.0; len],
    };
    for id in tree.nodes().rev() {
        let i = id.0;
        if tree.is_leaf(id) {
            out.k[i] = costs.q[i].clone();
            continue;
        }
        let mut h = costs.r[i].clone();
        let mut kf = costs.q[i].clone();
        let mut g = DMatrix::zeros(n, m);
        let mut hv = DVector::zeros(m);
        let mut gx = DVector::zeros(n);
        let mut c = 0.0;
        for &ch in tree.children(id) {
            let p = tree.prob(ch);
            let f = DMatrix::identity(n, n) + &sys.a[ch.0];
            let b = &sys.b[ch.0];
            let w = &sys.w[ch.0];
            let kc = &out.k[ch.0];
            let slope = kc * w + &out.linear[ch.0];
            h += b.transpose() * kc * b * p;
            kf += f.transpose() * kc * &f * p;
            g += f.transpose() * kc * b * p;
            hv += b.transpose() * &slope * p;
            gx += f.transpose() * &slope * p;
            c += p * (0.5 * w.dot(&(kc * w)) + out.linear[ch.0].dot(w) + out.offset[ch.0]);
        }
        let h = linalg::symmetrize(&h);
        if m > 0 && linalg::smallest_singular_value(&h) < SINGULAR_TOL {
            return Err(Error::SingularRiccati { node: Some(id) });
        }
        let hinv = h.clone().try_inverse().ok_or(Error::SingularRiccati { node: Some(id) })?;
        let lambda = &hinv * g.transpose();
        let kappa = &hinv * &hv;
        out.k[i] = linalg::symmetrize(&(kf - &g * &lambda * cross_weight));
        out.linear[i] = gx - &g * &kappa;
        out.offset[i] = c - 0.5 * hv.dot(&kappa);
        out.lambda[i] = lambda;
        out.kappa[i] = kappa;
    }
    Ok(out)
}

pub fn riccati(sys: &ControlSystem, costs: &LqCosts) -> Result<RiccatiData> {
    riccati_weighted(sys, costs, 1.0)
}

/// `K` from the halved cross-term display minus the stationarity `K`, per node.
pub fn riccati_display_delta(sys: &ControlSystem, costs: &LqCosts) -> Result<Vec<DMatrix<f64>>> {
    let exact = riccati(sys, costs)?;
    let halved = riccati_weighted(sys, costs, 0.5)?;
    Ok(halved.k.iter().zip(&exact.k).map(|(a, b)| a - b).collect())
}

/// Outcome of the measurability check of `J_t` against a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceReport {
    /// cells per stage that were checked
    pub cells: Vec<usize>,
    /// `J_t` identical across each whole stage
    pub deterministic: Vec<bool>,
    /// exchange-of-expectation conditions on node data hold trivially on finite trees
    pub data_commutation_noop: bool,
}

fn probes(n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]];
    for i in 0..n {
        for s in [1.0, -1.0, 2.5] {
            let mut v = vec![0.0; n];
            v[i] = s;
            out.push(v);
        }
    }
    out.push((0..n).map(|i| 0.7 - 0.3 * i as f64).collect());
    out
}

fn same_fn(f: &ConvexFn, g: &ConvexFn, pts: &[Vec<f64>], tol: f64) -> Result<bool> {
    for p in pts {
        let (a, b) = (f.eval(p)?, g.eval(p)?);
        let equal = (a.is_infinite() && b.is_infinite()) || (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
        if !equal {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks that `J_t` is constant within every cell of the supplied stage
/// partitions (default: the whole stage, i.e. `J_t` deterministic).
pub fn independence_reduction(
    sys: &ControlSystem,
    costs: &[ConvexFn],
    partition: Option<&[Vec<Vec<NodeId>>]>,
) -> Result<IndependenceReport> {
    let tree = &sys.tree;
    if let Some(cells) = partition {
        if cells.len() != tree.horizon() + 1 {
            return Err(Error::InvalidInput("one partition per stage required".into()));
        }
        for (t, stage_cells) in cells.iter().enumerate() {
            let mut seen = vec![0usize; tree.len()];
            for &id in stage_cells.iter().flatten() {
                if id.0 >= tree.len() || tree.stage(id) != t {
                    return Err(Error::InvalidInput(format!("cell member {id} is not a stage-{t} node")));
                }
                seen[id.0] += 1;
            }
            if tree.stage_nodes(t).any(|id| seen[id.0] != 1) {
                return Err(Error::InvalidInput(format!("stage-{t} cells must cover each node once")));
            }
        }
    }
    let vf = solve_oc(sys, costs)?;
    let pts = probes(sys.state_dim);
    let tol = 1e-10;
    let mut report = IndependenceReport { cells: vec![], deterministic: vec![], data_commutation_noop: true };
    for t in 0..=tree.horizon() {
        let whole: Vec<Vec<NodeId>> = vec![tree.stage_nodes(t).collect()];
        let cells = partition.map_or(&whole, |p| &p[t]);
        for cell in cells {
            for &other in cell.iter().skip(1) {
                if !same_fn(&vf.j[cell[0].0], &vf.j[other.0], &pts, tol)? {
                    return Err(Error::NotConditionallyIndependent { stage: t, first: cell[0], second: other });
                }
            }
        }
        let first = tree.stage_range(t).start;
        let mut det = true;
        for id in tree.stage_nodes(t).skip(1) {
            det &= same_fn(&vf.j[first], &vf.j[id.0], &pts, tol)?;
        }
        report.cells.push(cells.len());
        report.deterministic.push(det);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::{extract_policy, solve_be};
    use crate::extensive::{flatten, solve_extensive};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// T = 1, A = 0, B = 1, Q = R = 1, W = 0
    fn hand() -> (ControlSystem, LqCosts) {
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![1.0]]).unwrap());
        let sys = ControlSystem::new(tree, 1, 1, vec![scalar(0.0); 2], vec![scalar(1.0); 2], vec![DVector::zeros(1); 2]).unwrap();
        let costs = LqCosts { q: vec![scalar(1.0); 2], r: vec![scalar(1.0); 2] };
        (sys, costs)
    }

    #[test]
    fn hand_riccati() {
        let (sys, costs) = hand();
        let r = riccati(&sys, &costs).unwrap();
        assert!((r.k[0][(0, 0)] - 1.5).abs() < 1e-14);
        assert!((r.lambda[0][(0, 0)] - 0.5).abs() < 1e-14);
        let delta = riccati_display_delta(&sys, &costs).unwrap();
        assert!((delta[0][(0, 0)] - 0.25).abs() < 1e-14);
        // stationarity oracle: min_u ½x² + ½u² + ½(x+u)² = ¾x²
        let vf = solve_oc(&sys, &costs.to_convex(&sys).unwrap()).unwrap();
        for x in [-2.0, 0.5, 3.0] {
            assert!((vf.j[0].eval(&[x]).unwrap() - 0.75 * x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_costs_give_zero_values() {
        let (sys, _) = hand();
        let zero = LqCosts { q: vec![scalar(0.0); 2], r: vec![scalar(1.0); 2] };
        let r = riccati(&sys, &zero).unwrap();
        assert!(r.k.iter().all(|k| k.amax() == 0.0) && r.lambda.iter().all(|l| l.amax() == 0.0));
        let vf = solve_oc(&sys, &vec![ConvexFn::zero(2); 2]).unwrap();
        assert!(vf.j.iter().all(|j| j.eval(&[1.3]).unwrap() == 0.0));
    }

    #[test]
    fn shocked_instance_three_ways() {
        // W = ±1 at stage 1, random B
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap());
        let len = tree.len();
        let a = (0..len).map(|i| scalar(0.1 * (i % 3) as f64)).collect();
        let b = (0..len).map(|i| scalar(1.0 + 0.2 * (i % 2) as f64)).collect();
        let w = (0..len).map(|i| DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -0.5 })).collect();
        let sys = ControlSystem::new(tree.clone(), 1, 1, a, b, w).unwrap().with_initial_state(DVector::from_element(1, 0.8));
        let costs = LqCosts { q: vec![scalar(1.0); len], r: vec![scalar(0.5); len] };
        let ric = riccati(&sys, &costs).unwrap();
        let convex = costs.to_convex(&sys).unwrap();
        let vf = solve_oc(&sys, &convex).unwrap();
        let path = control_policy(&sys, &vf).unwrap();
        let x0 = DVector::from_element(1, 0.8);
        assert!((ric.value_at(&x0) - path.value).abs() < 1e-10);
        let p = oc_as_stage_problem(&sys, &convex).unwrap();
        let ext = solve_extensive(&flatten(&p)).unwrap();
        assert!((ext.value - path.value).abs() < 1e-8, "{} vs {}", ext.value, path.value);
        let be = solve_be(&p).unwrap();
        assert!((be.value() - path.value).abs() < 1e-8);
        // policies agree
        let pol = extract_policy(&be).unwrap();
        for id in tree.nodes() {
            assert!((pol.decisions[id][1] - path.controls[id][0]).abs() < 1e-8);
            let fb = -(&ric.lambda[id.0] * DVector::from_column_slice(&path.states[id]))[0] - ric.kappa[id.0][0];
            if !tree.is_leaf(id) {
                assert!((fb - path.controls[id][0]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn iid_shocks_give_deterministic_values() {
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
        let len = tree.len();
        let w: Vec<DVector<f64>> = (0..len).map(|i| DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let sys = ControlSystem::new(tree.clone(), 1, 1, vec![scalar(0.0); len], vec![scalar(1.0); len], w).unwrap();
        let costs = LqCosts { q: vec![scalar(1.0); len], r: vec![scalar(1.0); len] }.to_convex(&sys).unwrap();
        let rep = independence_reduction(&sys, &costs, None).unwrap();
        assert!(rep.deterministic.iter().all(|d| *d));
        let mut bad = costs.clone();
        bad[1] = bad[1].scale(3.0).unwrap();
        assert!(matches!(independence_reduction(&sys, &bad, None), Err(Error::NotConditionallyIndependent { stage: 1, .. })));
    }
}
