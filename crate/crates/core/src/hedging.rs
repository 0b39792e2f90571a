//! Hedging a claim `c` with positions `x_t` in traded assets.
//!
//! The loss `E V(c - Σ x_t·Δs_{t+1})` is handled through the wealth-state
//! control form: state `X` (wealth), controls `U = s∘x` (cash amounts), returns
//! `R_t = Δs_t / s_{t-1}`. Positions at the horizon are zero.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::control::{control_policy, solve_oc, ControlSystem};
use crate::convexfn::{ConvexFn, Halfspace, Inequalities, Quadratic, Sampled1D};
use crate::error::{Error, Result};
use crate::extensive::descend;
use crate::linalg;
use crate::lp::{Lp, LpOutcome};
use crate::num::{dot, exp};
use crate::tree::{AdaptedProcess, NodeId, ScenarioTree};

#[derive(Debug, Clone)]
pub struct MarketModel {
    pub tree: Arc<ScenarioTree>,
    /// `s_t` per node, `J` assets
    pub prices: AdaptedProcess<Vec<f64>>,
    /// `D_t` in units of assets, per node; leaves hold `{0}`
    pub constraints: Vec<Inequalities>,
    /// claim per leaf
    pub claim: AdaptedProcess<f64>,
}

fn zero_set(dim: usize) -> Inequalities {
    let mut set = Inequalities::new(dim);
    for j in 0..dim {
        let e: Vec<f64> = (0..dim).map(|i| f64::from(i == j)).collect();
        set.push(e.clone(), 0.0);
        set.push(e.iter().map(|v| -v).collect(), 0.0);
    }
    set
}

impl MarketModel {
    /// Unconstrained market. Prices must be finite and nonzero.
    pub fn new(tree: Arc<ScenarioTree>, prices: AdaptedProcess<Vec<f64>>, claim: AdaptedProcess<f64>) -> Result<Self> {
        let horizon = tree.horizon();
        if prices.first_stage() != 0 || prices.last_stage() != horizon {
            return Err(Error::InvalidInput("prices must be given at every node".into()));
        }
        if claim.first_stage() != horizon || claim.last_stage() != horizon {
            return Err(Error::InvalidInput("claim must be given at the leaves".into()));
        }
        let dim = prices[tree.root()].len();
        if dim == 0 {
            return Err(Error::InvalidInput("market needs at least one asset".into()));
        }
        for (id, s) in prices.iter() {
            if s.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: s.len() });
            }
            if s.iter().any(|v| !v.is_finite() || *v == 0.0) {
                return Err(Error::InvalidInput(format!("node {}: prices must be finite and nonzero", tree.label(id))));
            }
        }
        if let Some((id, _)) = claim.iter().find(|(_, c)| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("node {}: claim is not finite", tree.label(id))));
        }
        let constraints = tree
            .nodes()
            .map(|id| if tree.is_leaf(id) { zero_set(dim) } else { Inequalities::new(dim) })
            .collect();
        Ok(MarketModel { tree, prices, constraints, claim })
    }

    /// Position constraints for the trading nodes; entries for leaves are ignored.
    pub fn with_constraints(mut self, sets: Vec<Inequalities>) -> Result<Self> {
        if sets.len() != self.tree.len() {
            return Err(Error::InvalidInput(format!("expected {} constraint sets, got {}", self.tree.len(), sets.len())));
        }
        let dim = self.assets();
        for (i, set) in sets.into_iter().enumerate() {
            let id = NodeId(i);
            if self.tree.is_leaf(id) {
                continue;
            }
            if set.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: set.dim });
            }
            if !set.is_feasible()? {
                return Err(Error::InvalidInput(format!("node {}: position set is empty", self.tree.label(id))));
            }
            self.constraints[i] = set;
        }
        Ok(self)
    }

    pub fn with_claim(mut self, claim: AdaptedProcess<f64>) -> Result<Self> {
        let m = MarketModel::new(self.tree.clone(), self.prices.clone(), claim)?;
        self.claim = m.claim;
        Ok(self)
    }

    pub fn assets(&self) -> usize {
        self.prices[self.tree.root()].len()
    }

    pub fn is_constrained(&self) -> bool {
        self.tree.nodes().any(|id| !self.tree.is_leaf(id) && !self.constraints[id.0].rows.is_empty())
    }

    /// `Δs` arriving at `id` (zero at the root).
    pub fn increment(&self, id: NodeId) -> Vec<f64> {
        match self.tree.parent(id) {
            Some(p) => self.prices[id].iter().zip(&self.prices[p]).map(|(a, b)| a - b).collect(),
            None => vec![0.0; self.assets()],
        }
    }

    /// `R = Δs / s_{t-1}` arriving at `id` (zero at the root).
    pub fn returns(&self, id: NodeId) -> Vec<f64> {
        match self.tree.parent(id) {
            Some(p) => self.increment(id).iter().zip(&self.prices[p]).map(|(d, s)| d / s).collect(),
            None => vec![0.0; self.assets()],
        }
    }

    /// `D̃_t = {s∘x : x ∈ D_t}`, the position set in cash amounts.
    pub fn cash_constraints(&self, id: NodeId) -> Inequalities {
        let s = &self.prices[id];
        let rows = self.constraints[id.0]
            .rows
            .iter()
            .map(|r| Halfspace::new(r.coef.iter().zip(s).map(|(a, p)| a / p).collect(), r.rhs))
            .collect();
        Inequalities::with_rows(self.assets(), rows)
    }

    fn trading_nodes(&self) -> Vec<NodeId> {
        self.tree.nodes().filter(|&id| !self.tree.is_leaf(id)).collect()
    }
}

/// Recession cone `{a·x <= 0}` of a nonempty polyhedron.
fn recession_rows(set: &Inequalities) -> Vec<Vec<f64>> {
    set.rows.iter().map(|r| r.coef.clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaVerdict {
    pub pass: bool,
    /// optimal expected gain of the capped arbitrage program
    pub expected_gain: f64,
    /// positions (stages `0..T`) achieving it when the test fails
    pub arbitrage: Option<AdaptedProcess<Vec<f64>>>,
}

const NA_TOL: f64 = 1e-9;

/// Maximize expected gains over recession-feasible positions with nonnegative
/// pathwise gains and `‖x‖∞ <= 1`. Arbitrage-free iff the optimum is zero.
pub fn na_check(m: &MarketModel) -> Result<NaVerdict> {
    let tree = &m.tree;
    let dim = m.assets();
    let trading = m.trading_nodes();
    if trading.is_empty() {
        return Ok(NaVerdict { pass: true, expected_gain: 0.0, arbitrage: None });
    }
    let mut slot = vec![usize::MAX; tree.len()];
    for (k, id) in trading.iter().enumerate() {
        slot[id.0] = k * dim;
    }
    let nvars = trading.len() * dim;
    let mut lp = Lp::new(nvars);
    let mut scale: f64 = 0.0;
    for &id in &trading {
        for &c in tree.children(id) {
            let ds = m.increment(c);
            scale = scale.max(crate::num::norm_inf(&ds));
            for j in 0..dim {
                lp.objective[slot[id.0] + j] -= tree.uncond_prob(c) * ds[j];
            }
        }
        for row in recession_rows(&m.constraints[id.0]) {
            let mut coef = vec![0.0; nvars];
            coef[slot[id.0]..slot[id.0] + dim].copy_from_slice(&row);
            lp.le(coef, 0.0);
        }
        for j in 0..dim {
            let mut coef = vec![0.0; nvars];
            coef[slot[id.0] + j] = 1.0;
            lp.le(coef.clone(), 1.0);
            coef[slot[id.0] + j] = -1.0;
            lp.le(coef, 1.0);
        }
    }
    for leaf in tree.leaves() {
        let mut coef = vec![0.0; nvars];
        let path = tree.path(leaf);
        for w in path.windows(2) {
            let ds = m.increment(w[1]);
            for j in 0..dim {
                coef[slot[w[0].0] + j] -= ds[j];
            }
        }
        lp.le(coef, 0.0);
    }
    let (x, value) = match lp.solve()? {
        LpOutcome::Optimal { x, value } => (x, value),
        // x = 0 is always feasible and the box keeps the program bounded
        LpOutcome::Infeasible | LpOutcome::Unbounded => return Err(Error::IterationLimit),
    };
    let gain = -value;
    let pass = gain <= NA_TOL * (1.0 + scale);
    let arbitrage = (!pass).then(|| {
        AdaptedProcess::from_fn(tree, 0, tree.horizon() - 1, |id| x[slot[id.0]..slot[id.0] + dim].to_vec())
    });
    Ok(NaVerdict { pass, expected_gain: gain.max(0.0), arbitrage })
}

/// `σ_D(v) = sup{v·x : x ∈ D}`; `+inf` when unbounded.
pub fn support_function(set: &Inequalities, v: &[f64]) -> Result<f64> {
    let mut lp = Lp::new(set.dim);
    lp.objective = v.iter().map(|a| -a).collect();
    for r in &set.rows {
        lp.le(r.coef.clone(), r.rhs);
    }
    Ok(match lp.solve()? {
        LpOutcome::Optimal { value, .. } => -value,
        LpOutcome::Unbounded => f64::INFINITY,
        LpOutcome::Infeasible => f64::NEG_INFINITY,
    })
}

/// `σ_{D_t}(E_t[y Δs_{t+1}])` at every trading node, for a density-like `y`
/// given on the whole tree.
pub fn support_diagnostics(m: &MarketModel, y: &AdaptedProcess<f64>) -> Result<Vec<(NodeId, f64)>> {
    let tree = &m.tree;
    m.trading_nodes()
        .into_iter()
        .map(|id| {
            let mut v = vec![0.0; m.assets()];
            for &c in tree.children(id) {
                for (vj, d) in v.iter_mut().zip(m.increment(c)) {
                    *vj += tree.prob(c) * y[c] * d;
                }
            }
            Ok((id, support_function(&m.constraints[id.0], &v)?))
        })
        .collect()
}

/// Deterministic loss `V`.
#[derive(Debug, Clone, PartialEq)]
pub enum LossFn {
    /// `scale·u²`; admitted for quadratic hedging although it is not monotone
    Quadratic { scale: f64 },
    /// `exp(ρu)/ρ`
    Exponential { rho: f64 },
    /// `(u⁺)^p`, `p >= 1`
    PositivePower { p: f64 },
    Sampled(Sampled1D),
}

impl LossFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossFn::Quadratic { scale } if !(*scale > 0.0 && scale.is_finite()) => {
                Err(Error::InvalidFunction("quadratic loss needs a positive scale".into()))
            }
            LossFn::Exponential { rho } if !(*rho > 0.0 && rho.is_finite()) => {
                Err(Error::InvalidFunction("exponential loss needs rho > 0".into()))
            }
            LossFn::PositivePower { p } if !(*p >= 1.0 && p.is_finite()) => {
                Err(Error::InvalidFunction("power loss needs p >= 1".into()))
            }
            LossFn::Sampled(f) => {
                let s = f.slopes();
                if let Some(k) = s.iter().position(|v| *v < 0.0) {
                    return Err(Error::NonMonotone { at: f.knots[k] });
                }
                if s.last().is_none_or(|v| *v <= 0.0) {
                    return Err(Error::InvalidFunction("loss is constant".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            LossFn::Quadratic { scale } => scale * u * u,
            LossFn::Exponential { rho } => exp(rho * u) / rho,
            LossFn::PositivePower { p } => crate::num::powf(u.max(0.0), *p),
            LossFn::Sampled(f) => f.eval(u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlmMethod {
    /// exact affine-quadratic value functions
    Quadratic,
    /// value functions sampled on a wealth grid
    WealthGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlmOptions {
    pub allow_arbitrage: bool,
    pub grid_points: usize,
    /// wealth range; derived from the claim and `w` when `None`
    pub grid: Option<(f64, f64)>,
}

impl Default for AlmOptions {
    fn default() -> Self {
        AlmOptions { allow_arbitrage: false, grid_points: 801, grid: None }
    }
}

#[derive(Debug, Clone)]
pub struct AlmSolution {
    /// `E V(c - X_T)` along the returned policy
    pub value: f64,
    pub method: AlmMethod,
    pub wealth: AdaptedProcess<f64>,
    /// cash amounts `U_t`
    pub cash: AdaptedProcess<Vec<f64>>,
    /// positions `x_t = U_t / s_t`
    pub positions: AdaptedProcess<Vec<f64>>,
    /// wealth-grid value functions per node (grid method only)
    pub value_fns: Option<Vec<Sampled1D>>,
    pub verdict: NaVerdict,
}

/// Minimize `E V(c - X_T)` from initial wealth `w`.
pub fn solve_alm(m: &MarketModel, loss: &LossFn, w: f64, opts: &AlmOptions) -> Result<AlmSolution> {
    loss.validate()?;
    let verdict = na_check(m)?;
    if !verdict.pass && !opts.allow_arbitrage {
        return Err(Error::ArbitrageRefusal);
    }
    let (method, wealth, cash, value_fns) = match loss {
        LossFn::Quadratic { scale } if !m.is_constrained() => {
            let (x, u) = quadratic_hedge(m, *scale, w)?;
            (AlmMethod::Quadratic, x, u, None)
        }
        _ => {
            let (x, u, fns) = grid_hedge(m, loss, w, opts)?;
            (AlmMethod::WealthGrid, x, u, Some(fns))
        }
    };
    let tree = &m.tree;
    let value = tree.leaves().map(|l| tree.uncond_prob(l) * loss.eval(m.claim[l] - wealth[l])).sum();
    let positions = cash.map(|id, u| u.iter().zip(&m.prices[id]).map(|(a, s)| a / s).collect());
    Ok(AlmSolution { value, method, wealth, cash, positions, value_fns, verdict })
}

fn control_system(m: &MarketModel, w: f64) -> Result<ControlSystem> {
    let tree = &m.tree;
    let dim = m.assets();
    let n = tree.len();
    let b = tree.nodes().map(|id| DMatrix::from_row_slice(1, dim, &m.returns(id))).collect();
    let sys = ControlSystem::new(tree.clone(), 1, dim, vec![DMatrix::zeros(1, 1); n], b, vec![DVector::zeros(1); n])?;
    Ok(sys.with_initial_state(DVector::from_element(1, w)))
}

type Path = (AdaptedProcess<f64>, AdaptedProcess<Vec<f64>>);

fn quadratic_hedge(m: &MarketModel, scale: f64, w: f64) -> Result<Path> {
    let tree = &m.tree;
    let dim = m.assets();
    let sys = control_system(m, w)?;
    let costs = tree
        .nodes()
        .map(|id| {
            if !tree.is_leaf(id) {
                return Ok(ConvexFn::zero(1 + dim));
            }
            // scale·(c - X)² with U = 0
            let c = m.claim[id];
            let mut q = DMatrix::zeros(1 + dim, 1 + dim);
            q[(0, 0)] = 2.0 * scale;
            let mut lin = DVector::zeros(1 + dim);
            lin[0] = -2.0 * scale * c;
            let mut a = DMatrix::zeros(dim, 1 + dim);
            a.view_mut((0, 1), (dim, dim)).fill_with_identity();
            let f = Quadratic::new(q, lin, scale * c * c)?.constrained(&a, &DVector::zeros(dim))?;
            Ok(ConvexFn::Quadratic(f))
        })
        .collect::<Result<Vec<_>>>()?;
    let vf = solve_oc(&sys, &costs)?;
    let path = control_policy(&sys, &vf)?;
    Ok((path.states.map(|_, x| x[0]), path.controls))
}

/// Lower convex minorant of sampled values (repairs round-off in inner minima).
fn convex_minorant(knots: &[f64], values: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::with_capacity(knots.len());
    for i in 0..knots.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (knots[b] - knots[a]) * (values[i] - values[a]) - (values[b] - values[a]) * (knots[i] - knots[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = values.to_vec();
    for seg in hull.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        for k in a + 1..b {
            let t = (knots[k] - knots[a]) / (knots[b] - knots[a]);
            out[k] = values[a] * (1.0 - t) + values[b] * t;
        }
    }
    out
}

/// Minimize `f` over `set` starting from the feasible point `start`.
fn minimize_on(set: &Inequalities, start: &[f64], f: impl Fn(&[f64]) -> f64) -> Result<(Vec<f64>, f64)> {
    let dim = start.len();
    let objective = |y: &DVector<f64>| -> Result<f64> {
        let u: Vec<f64> = (0..dim).map(|j| start[j] + y[j]).collect();
        Ok(if set.contains(&u, 1e-12) { f(&u) } else { f64::INFINITY })
    };
    let (y, value, _) = descend(&objective, dim).map_err(|e| match e {
        Error::Unbounded => Error::UnboundedBelow { node: None },
        other => other,
    })?;
    Ok(((0..dim).map(|j| start[j] + y[j]).collect(), value))
}

fn default_grid(m: &MarketModel, w: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (w, w);
    for (_, c) in m.claim.iter() {
        lo = lo.min(*c);
        hi = hi.max(*c);
    }
    let span = (hi - lo) + w.abs() + 1.0;
    (lo - span, hi + span)
}

type GridPath = (AdaptedProcess<f64>, AdaptedProcess<Vec<f64>>, Vec<Sampled1D>);

/// Widenings of the default wealth grid before giving up.
const GRID_WIDENINGS: usize = 6;

fn grid_hedge(m: &MarketModel, loss: &LossFn, w: f64, opts: &AlmOptions) -> Result<GridPath> {
    if let Some((lo, hi)) = opts.grid {
        return grid_hedge_on(m, loss, w, lo, hi, opts.grid_points);
    }
    // value functions extrapolate linearly off the grid, which understates a
    // superlinear loss; widen until the optimal wealth path stays inside
    let (mut lo, mut hi) = default_grid(m, w);
    let mut attempt = 0;
    loop {
        let outcome = grid_hedge_on(m, loss, w, lo, hi, opts.grid_points);
        let escaped = match &outcome {
            Ok((x, _, _)) => x.iter().any(|(_, v)| *v < lo || *v > hi),
            Err(Error::UnboundedBelow { .. }) => true,
            Err(_) => false,
        };
        attempt += 1;
        if !escaped || attempt > GRID_WIDENINGS {
            return outcome;
        }
        let half = hi - lo;
        (lo, hi) = (lo - half, hi + half);
    }
}

fn grid_hedge_on(m: &MarketModel, loss: &LossFn, w: f64, lo: f64, hi: f64, points: usize) -> Result<GridPath> {
    let tree = &m.tree;
    let n = points.max(3);
    if !(lo < hi) {
        return Err(Error::InvalidInput("wealth grid must satisfy lo < hi".into()));
    }
    let knots: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let mut fns: Vec<Option<Sampled1D>> = vec![None; tree.len()];
    for t in (0..=tree.horizon()).rev() {
        let ids: Vec<usize> = tree.stage_range(t).collect();
        let done = {
            let fns = &fns;
            let knots = &knots;
            crate::par::try_map(&ids, |i| {
                let id = NodeId(i);
                let values: Vec<f64> = if tree.is_leaf(id) {
                    knots.iter().map(|x| loss.eval(m.claim[id] - x)).collect()
                } else {
                    let set = m.cash_constraints(id);
                    let mut start = set.feasible_point()?.ok_or(Error::Infeasible { node: Some(id) })?;
                    let mut out = Vec::with_capacity(knots.len());
                    for &x in knots {
                        let (u, v) = inner_step(m, fns, id, &set, &start, x).map_err(|e| e.at_node(id))?;
                        start = u;
                        out.push(v);
                    }
                    out
                };
                let repaired = convex_minorant(knots, &values);
                Sampled1D::new(knots.clone(), repaired, true)
            })?
        };
        for (i, f) in ids.into_iter().zip(done) {
            fns[i] = Some(f);
        }
    }
    let fns: Vec<Sampled1D> = fns.into_iter().map(Option::unwrap).collect();
    let slots: Vec<Option<Sampled1D>> = fns.iter().cloned().map(Some).collect();
    let dim = m.assets();
    let mut xs = vec![0.0; tree.len()];
    let mut us = vec![vec![0.0; dim]; tree.len()];
    for id in tree.nodes() {
        let x = match tree.parent(id) {
            None => w,
            Some(p) => xs[p.0] + dot(&m.returns(id), &us[p.0]),
        };
        xs[id.0] = x;
        if !tree.is_leaf(id) {
            let set = m.cash_constraints(id);
            let start = set.feasible_point()?.ok_or(Error::Infeasible { node: Some(id) })?;
            us[id.0] = inner_step(m, &slots, id, &set, &start, x).map_err(|e| e.at_node(id))?.0;
        }
    }
    Ok((AdaptedProcess::full(tree, |id| xs[id.0]), AdaptedProcess::full(tree, |id| us[id.0].clone()), fns))
}

/// `inf_U Σ π_c J_c(X + R_c·U)` over `U ∈ D̃`.
fn inner_step(
    m: &MarketModel,
    fns: &[Option<Sampled1D>],
    id: NodeId,
    set: &Inequalities,
    start: &[f64],
    x: f64,
) -> Result<(Vec<f64>, f64)> {
    let tree = &m.tree;
    let kids: Vec<(f64, Vec<f64>, &Sampled1D)> =
        tree.children(id).iter().map(|&c| (tree.prob(c), m.returns(c), fns[c.0].as_ref().unwrap())).collect();
    minimize_on(set, start, |u| kids.iter().map(|(p, r, j)| p * j.eval(x + dot(r, u))).sum())
}

/// Exponential-utility recursion: `J_t(X) = α_t V(-X)` with `V(u) = exp(ρu)/ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpUtility {
    pub rho: f64,
    pub alpha: AdaptedProcess<f64>,
    /// optimal cash amounts, independent of wealth (zero at leaves)
    pub cash: AdaptedProcess<Vec<f64>>,
    pub positions: AdaptedProcess<Vec<f64>>,
}

impl ExpUtility {
    /// `J_t(X) = α_t exp(-ρX)/ρ`.
    pub fn value(&self, id: NodeId, wealth: f64) -> f64 {
        self.alpha[id] * exp(-self.rho * wealth) / self.rho
    }
}

const POLISH_STEPS: usize = 30;

/// `α_T = exp(ρc)`, `α_t = inf_{U ∈ D̃_t} E_t[α_{t+1} exp(-ρ R_{t+1}·U)]`.
pub fn exp_utility(m: &MarketModel, rho: f64) -> Result<ExpUtility> {
    LossFn::Exponential { rho }.validate()?;
    let tree = &m.tree;
    let dim = m.assets();
    let mut alpha = vec![0.0; tree.len()];
    let mut cash = vec![vec![0.0; dim]; tree.len()];
    for t in (0..=tree.horizon()).rev() {
        let ids: Vec<usize> = tree.stage_range(t).collect();
        let done = {
            let alpha = &alpha;
            crate::par::try_map(&ids, |i| {
                let id = NodeId(i);
                if tree.is_leaf(id) {
                    return Ok((exp(rho * m.claim[id]), vec![0.0; dim]));
                }
                let weights: Vec<(f64, Vec<f64>)> =
                    tree.children(id).iter().map(|&c| (tree.prob(c) * alpha[c.0], m.returns(c))).collect();
                let (u, v) = exp_inner(m, id, rho, &weights, 0.0).map_err(|e| e.at_node(id))?;
                Ok((v, u))
            })?
        };
        for (i, (a, u)) in ids.into_iter().zip(done) {
            alpha[i] = a;
            cash[i] = u;
        }
    }
    let positions = AdaptedProcess::full(tree, |id| cash[id.0].iter().zip(&m.prices[id]).map(|(u, s)| u / s).collect());
    Ok(ExpUtility {
        rho,
        alpha: AdaptedProcess::full(tree, |id| alpha[id.0]),
        cash: AdaptedProcess::full(tree, |id| cash[id.0].clone()),
        positions,
    })
}

/// Argmin of `U -> E_t[J_{t+1}(X + R·U)]` at wealth `X`, solved directly on the
/// wealth-dependent objective (used to confirm wealth independence).
pub fn exp_argmin_at_wealth(m: &MarketModel, sol: &ExpUtility, id: NodeId, wealth: f64) -> Result<Vec<f64>> {
    let tree = &m.tree;
    if tree.is_leaf(id) {
        return Ok(vec![0.0; m.assets()]);
    }
    let weights: Vec<(f64, Vec<f64>)> =
        tree.children(id).iter().map(|&c| (tree.prob(c) * sol.alpha[c] / sol.rho, m.returns(c))).collect();
    Ok(exp_inner(m, id, sol.rho, &weights, wealth).map_err(|e| e.at_node(id))?.0)
}

/// `inf_U Σ w_c exp(-ρ(X + R_c·U))` over `D̃`: arbitrage screen, coordinate
/// descent, then Newton polish while it stays feasible and does not increase.
fn exp_inner(m: &MarketModel, id: NodeId, rho: f64, weights: &[(f64, Vec<f64>)], wealth: f64) -> Result<(Vec<f64>, f64)> {
    let dim = m.assets();
    let set = m.cash_constraints(id);
    if local_arbitrage(&set, weights)? {
        return Err(Error::UnboundedExp { node: None });
    }
    let f = |u: &[f64]| -> f64 { weights.iter().map(|(w, r)| w * exp(-rho * (wealth + dot(r, u)))).sum() };
    let start = set.feasible_point()?.ok_or(Error::Infeasible { node: None })?;
    let (mut u, mut value) = minimize_on(&set, &start, f).map_err(|e| match e {
        Error::UnboundedBelow { .. } => Error::UnboundedExp { node: None },
        other => other,
    })?;
    let derivatives = |u: &[f64]| {
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        for (w, r) in weights {
            let e = w * exp(-rho * (wealth + dot(r, u)));
            let r = DVector::from_column_slice(r);
            g -= &r * (rho * e);
            h += &r * r.transpose() * (rho * rho * e);
        }
        (g, h)
    };
    let (mut g, mut h) = derivatives(&u);
    for _ in 0..POLISH_STEPS {
        let step = -(linalg::pinv(&h) * &g);
        if step.amax() <= 1e-15 * (1.0 + crate::num::norm_inf(&u)) {
            break;
        }
        let next: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        if !set.contains(&next, 1e-12) {
            break;
        }
        // near the minimum values stall at round-off, so the gradient decides
        let v = f(&next);
        let (g_next, h_next) = derivatives(&next);
        if !(v <= value || g_next.amax() < g.amax()) {
            break;
        }
        u = next;
        value = v.min(value);
        g = g_next;
        h = h_next;
    }
    Ok((u, value))
}

/// A nonzero recession direction `d ∈ D̃^∞` with `R_c·d >= 0` for every child
/// and positive expected return drives the infimum to zero without attaining it.
fn local_arbitrage(set: &Inequalities, weights: &[(f64, Vec<f64>)]) -> Result<bool> {
    let dim = set.dim;
    let mut lp = Lp::new(dim);
    let mut scale: f64 = 0.0;
    for (w, r) in weights {
        scale = scale.max(crate::num::norm_inf(r));
        for j in 0..dim {
            lp.objective[j] -= w * r[j];
        }
        lp.le(r.iter().map(|v| -v).collect(), 0.0);
    }
    for row in recession_rows(set) {
        lp.le(row, 0.0);
    }
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        lp.le(e.clone(), 1.0);
        e[j] = -1.0;
        lp.le(e, 1.0);
    }
    Ok(match lp.solve()? {
        LpOutcome::Optimal { value, .. } => -value > NA_TOL * (1.0 + scale),
        _ => false,
    })
}

/// Asymptotic elasticities estimated at the ends of a probe range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeEstimate {
    pub minus: f64,
    pub plus: f64,
    /// `AE_- < 1` or `AE_+ > 1`
    pub reasonable: bool,
}

/// Probe `u V'(u) / V(u)` on a geometric grid of magnitudes in `[lo, hi]`
/// (both signs) with forward difference quotients; the estimates are taken at
/// `±hi`. Every probe is checked for monotonicity.
pub fn ae_estimate(loss: &LossFn, lo: f64, hi: f64, points: usize) -> Result<AeEstimate> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidInput("probe range needs 0 < lo < hi".into()));
    }
    let points = points.max(2);
    let ratio = crate::num::powf(hi / lo, 1.0 / (points - 1) as f64);
    let elasticity = |u: f64| -> Result<f64> {
        let h = 1e-7 * u.abs().max(1.0);
        let (v, vh) = (loss.eval(u), loss.eval(u + h));
        if !v.is_finite() || !vh.is_finite() {
            return Err(Error::InvalidInput(format!("loss is not finite at u = {u}")));
        }
        let slope = (vh - v) / h;
        if slope < -1e-9 * (1.0 + v.abs()) / h {
            return Err(Error::NonMonotone { at: u });
        }
        Ok(if v == 0.0 {
            if slope == 0.0 { 0.0 } else { f64::INFINITY.copysign(u * slope) }
        } else {
            u * slope / v
        })
    };
    let mut mag = lo;
    let (mut minus, mut plus) = (0.0, 0.0);
    for k in 0..points {
        if k == points - 1 {
            mag = hi;
        }
        minus = elasticity(-mag)?;
        plus = elasticity(mag)?;
        mag *= ratio;
    }
    Ok(AeEstimate { minus, plus, reasonable: minus < 1.0 || plus > 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_period(up: f64, down: f64, p: f64, claim: [f64; 2]) -> MarketModel {
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![p, 1.0 - p]]).unwrap());
        let prices = AdaptedProcess::full(&tree, |id| vec![[1.0, up, down][id.0]]);
        let claim = AdaptedProcess::at_stage(&tree, 1, |id| claim[id.0 - 1]);
        MarketModel::new(tree, prices, claim).unwrap()
    }

    #[test]
    fn rising_market_is_an_arbitrage() {
        let v = na_check(&one_period(2.0, 3.0, 0.5, [0.0; 2])).unwrap();
        assert!(!v.pass);
        let x = v.arbitrage.unwrap();
        assert!(x[NodeId(0)][0] > 0.0);
    }

    #[test]
    fn binomial_with_martingale_measure_passes() {
        for p in [0.1, 0.5, 0.9] {
            assert!(na_check(&one_period(0.5, 2.0, p, [0.0; 2])).unwrap().pass);
        }
    }

    #[test]
    fn short_sale_ban_removes_the_arbitrage_of_a_falling_market() {
        let m = one_period(0.5, 0.8, 0.5, [0.0; 2]);
        assert!(!na_check(&m).unwrap().pass);
        let ban = Inequalities::with_rows(1, vec![Halfspace::new(vec![-1.0], 0.0)]);
        let n = m.tree.len();
        let m = m.with_constraints(vec![ban; n]).unwrap();
        assert!(na_check(&m).unwrap().pass);
    }

    #[test]
    fn zero_prices_are_rejected() {
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![0.5, 0.5]]).unwrap());
        let prices = AdaptedProcess::full(&tree, |id| vec![[1.0, 0.0, 2.0][id.0]]);
        let claim = AdaptedProcess::at_stage(&tree, 1, |_| 0.0);
        assert!(matches!(MarketModel::new(tree, prices, claim), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn leaves_hold_no_position() {
        let m = one_period(0.5, 2.0, 0.5, [0.0; 2]);
        for leaf in m.tree.leaves() {
            assert!(m.constraints[leaf.0].contains(&[0.0], 0.0));
            assert!(!m.constraints[leaf.0].contains(&[0.1], 1e-12));
        }
    }

    #[test]
    fn quadratic_hedge_matches_least_squares() {
        let m = one_period(0.5, 2.0, 0.5, [0.0, 1.5]);
        let s = solve_alm(&m, &LossFn::Quadratic { scale: 1.0 }, 0.0, &AlmOptions::default()).unwrap();
        assert_eq!(s.method, AlmMethod::Quadratic);
        // x = E[cΔs]/E[Δs²] = 0.75/0.625, value = E c² - x E[cΔs]
        assert!((s.positions[NodeId(0)][0] - 1.2).abs() < 1e-10);
        assert!((s.value - 0.225).abs() < 1e-10);
    }

    #[test]
    fn nothing_to_hedge() {
        let m = one_period(0.5, 2.0, 2.0 / 3.0, [0.0; 2]);
        for loss in [LossFn::Quadratic { scale: 1.0 }, LossFn::PositivePower { p: 1.0 }] {
            let s = solve_alm(&m, &loss, 0.0, &AlmOptions::default()).unwrap();
            assert!(s.value.abs() < 1e-9, "{loss:?}: {}", s.value);
            assert!(s.cash[NodeId(0)][0].abs() < 1e-6);
        }
    }

    #[test]
    fn arbitrage_is_refused_unless_allowed() {
        let m = one_period(2.0, 3.0, 0.5, [1.0, 1.0]);
        let loss = LossFn::Exponential { rho: 1.0 };
        assert!(matches!(solve_alm(&m, &loss, 0.0, &AlmOptions::default()), Err(Error::ArbitrageRefusal)));
        assert!(matches!(exp_utility(&m, 1.0), Err(Error::UnboundedExp { node: Some(NodeId(0)) })));
    }

    #[test]
    fn exp_symmetric_returns_hold_nothing() {
        let m = one_period(1.3, 0.7, 0.5, [0.0; 2]);
        let e = exp_utility(&m, 1.0).unwrap();
        assert!(e.cash[NodeId(0)][0].abs() < 1e-10);
        assert!((e.alpha[NodeId(0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_two_point_closed_form() {
        let e1 = core::f64::consts::E;
        let m = one_period(1.5, 0.5, e1 / (1.0 + e1), [0.0; 2]);
        let e = exp_utility(&m, 1.0).unwrap();
        assert!((e.cash[NodeId(0)][0] - 1.0).abs() < 1e-8, "{}", e.cash[NodeId(0)][0]);
        for w in [-3.0, 0.0, 5.0] {
            let u = exp_argmin_at_wealth(&m, &e, NodeId(0), w).unwrap();
            assert!((u[0] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn grid_driver_is_nonincreasing_in_wealth() {
        let m = one_period(0.5, 2.0, 0.4, [0.0, 1.0]);
        let loss = LossFn::Exponential { rho: 1.0 };
        let vals: Vec<f64> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|&w| solve_alm(&m, &loss, w, &AlmOptions::default()).unwrap().value)
            .collect();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2], "{vals:?}");
    }

    #[test]
    fn convex_minorant_fixes_round_off() {
        let k = [0.0, 1.0, 2.0, 3.0];
        let v = [1.0, 0.0, 1e-13, 0.0];
        let r = convex_minorant(&k, &v);
        assert!(Sampled1D::new(k.to_vec(), r.clone(), true).is_ok());
        assert!(r.iter().zip(&v).all(|(a, b)| a <= b));
    }

    #[test]
    fn ae_examples() {
        let exp_ae = ae_estimate(&LossFn::Exponential { rho: 1.0 }, 10.0, 30.0, 9).unwrap();
        assert!(exp_ae.plus > 10.0 && exp_ae.reasonable);
        let sq = ae_estimate(&LossFn::PositivePower { p: 2.0 }, 10.0, 30.0, 9).unwrap();
        assert!((sq.plus - 2.0).abs() < 0.05);
        let lin = ae_estimate(&LossFn::PositivePower { p: 1.0 }, 10.0, 30.0, 9).unwrap();
        assert!((lin.plus - 1.0).abs() < 1e-6);
        assert_eq!(lin.minus, 0.0);
    }

    #[test]
    fn ae_flags_decreasing_loss() {
        let f = Sampled1D { knots: vec![-40.0, 0.0, 40.0], values: vec![1.0, 0.0, 1.0], extrapolate: true };
        assert!(matches!(ae_estimate(&LossFn::Sampled(f.clone()), 10.0, 30.0, 5), Err(Error::NonMonotone { .. })));
        assert!(matches!(LossFn::Sampled(f).validate(), Err(Error::NonMonotone { .. })));
    }
}
