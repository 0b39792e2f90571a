//! Backward dynamic-programming recursion over a scenario tree.
//!
//! Two problem layouts share one engine:
//! * general: each node carries a term over the whole decision history
//!   `x^t = (x_0, ..., x_t)`; the leaf integrand is the sum along the path;
//! * stage-additive: each node carries `g(x_{t-1}, x_t)` (the root: `g(x_0)`),
//!   and the recursion runs on cost-to-go functions of the current decision.
//!
//! At every node the nodal function is minimized over the node's own decision;
//! the minimizer is the minimum-norm one orthogonal to the lineality space.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::convexfn::{cond_expect_fn, ConvexFn, LinealitySpace, RecessionPolicy, Selector};
use crate::error::{Error, Result};
use crate::extensive::{self, FlatProgram};
use crate::tree::{perp_violation, AdaptedProcess, NodeId, ScenarioTree, ShadowPrice};

/// Largest total decision dimension accepted in general mode.
pub const MAX_GENERAL_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Per-node term over `x^t`; `None` is the zero function.
    General(Vec<Option<ConvexFn>>),
    /// Per-node stage cost over `(x_{t-1}, x_t)`, root over `x_0`.
    StageAdditive(Vec<ConvexFn>),
}

#[derive(Debug, Clone)]
pub struct StageProblem {
    pub tree: Arc<ScenarioTree>,
    /// decision dimension per stage
    pub dims: Vec<usize>,
    pub objective: Objective,
    pub recession_policy: RecessionPolicy,
}

impl StageProblem {
    pub fn general(tree: Arc<ScenarioTree>, dims: Vec<usize>, terms: Vec<Option<ConvexFn>>) -> Result<Self> {
        let p = StageProblem { tree, dims, objective: Objective::General(terms), recession_policy: RecessionPolicy::Strict };
        p.validate()?;
        Ok(p)
    }

    pub fn stage_additive(tree: Arc<ScenarioTree>, dims: Vec<usize>, costs: Vec<ConvexFn>) -> Result<Self> {
        let p = StageProblem {
            tree,
            dims,
            objective: Objective::StageAdditive(costs),
            recession_policy: RecessionPolicy::Strict,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_policy(mut self, policy: RecessionPolicy) -> Self {
        self.recession_policy = policy;
        self
    }

    pub fn is_general(&self) -> bool {
        matches!(self.objective, Objective::General(_))
    }

    fn validate(&self) -> Result<()> {
        let tree = &self.tree;
        if self.dims.len() != tree.horizon() + 1 {
            return Err(Error::InvalidInput(format!(
                "expected {} stage dimensions, got {}",
                tree.horizon() + 1,
                self.dims.len()
            )));
        }
        let count = match &self.objective {
            Objective::General(t) => t.len(),
            Objective::StageAdditive(c) => c.len(),
        };
        if count != tree.len() {
            return Err(Error::InvalidInput(format!("expected {} node terms, got {count}", tree.len())));
        }
        if self.is_general() {
            let total: usize = self.dims.iter().sum();
            if total > MAX_GENERAL_DIM {
                return Err(Error::InvalidInput(format!(
                    "general mode supports at most {MAX_GENERAL_DIM} decision coordinates, got {total}"
                )));
            }
        }
        for id in tree.nodes() {
            if let Some(f) = self.term(id) {
                let expect = self.term_dim(id);
                if f.dim() != expect {
                    return Err(Error::DimensionMismatch { expected: expect, found: f.dim() });
                }
                if self.is_general() && matches!(f, ConvexFn::Sampled1D(_)) && expect != 1 {
                    return Err(Error::BackendClash("general mode needs quadratic or polyhedral terms"));
                }
            }
        }
        Ok(())
    }

    pub fn term(&self, id: NodeId) -> Option<&ConvexFn> {
        match &self.objective {
            Objective::General(t) => t[id.0].as_ref(),
            Objective::StageAdditive(c) => Some(&c[id.0]),
        }
    }

    /// Nodes whose decision blocks the node's term reads, in order.
    pub fn term_blocks(&self, id: NodeId) -> Vec<NodeId> {
        match &self.objective {
            Objective::General(_) => self.tree.path(id),
            Objective::StageAdditive(_) => match self.tree.parent(id) {
                Some(p) => vec![p, id],
                None => vec![id],
            },
        }
    }

    pub fn term_dim(&self, id: NodeId) -> usize {
        self.term_blocks(id).iter().map(|&b| self.dims[self.tree.stage(b)]).sum()
    }

    /// History dimension `n_0 + ... + n_t`.
    pub fn history_dim(&self, t: usize) -> usize {
        self.dims[..=t].iter().sum()
    }

    /// Same layout with every term replaced by `f(term)`.
    pub fn map_terms(&self, f: impl Fn(NodeId, &ConvexFn) -> Result<ConvexFn>) -> Result<StageProblem> {
        let objective = match &self.objective {
            Objective::General(t) => Objective::General(
                t.iter()
                    .enumerate()
                    .map(|(i, g)| g.as_ref().map(|g| f(NodeId(i), g)).transpose())
                    .collect::<Result<_>>()?,
            ),
            Objective::StageAdditive(c) => {
                Objective::StageAdditive(c.iter().enumerate().map(|(i, g)| f(NodeId(i), g)).collect::<Result<_>>()?)
            }
        };
        Ok(StageProblem { objective, ..self.clone() })
    }
}

/// Per-node output of the recursion.
#[derive(Debug, Clone)]
pub struct NodeSolution {
    /// `h_t` (general) or `V_t` (stage-additive) at the node
    pub value: ConvexFn,
    /// function minimized over the node's decision
    pub nodal: ConvexFn,
    /// nodal function after minimization: `ĥ` (general) or `Ṽ` (stage-additive)
    pub reduced: ConvexFn,
    pub selector: Selector,
    pub lineality: LinealitySpace,
    /// recession set of the nodal minimization is a linear space
    pub linear: bool,
}

#[derive(Debug, Clone)]
pub struct BellmanSolution {
    pub problem: StageProblem,
    pub nodes: Vec<NodeSolution>,
}

impl BellmanSolution {
    pub fn node(&self, id: NodeId) -> &NodeSolution {
        &self.nodes[id.0]
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.problem.tree
    }

    /// Optimal value (minimum of the root's nodal function).
    pub fn value(&self) -> f64 {
        self.nodes[0].reduced.eval(&[]).unwrap_or(f64::NAN)
    }

    pub fn all_linear(&self) -> bool {
        self.nodes.iter().all(|n| n.linear)
    }
}

fn block_embedding(rows: usize, cols: usize, at: usize) -> DMatrix<f64> {
    // (x_prev, x_cur) -> x_cur as a selection of the trailing block
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        m[(i, at + i)] = 1.0;
    }
    m
}

/// Backward sweep.
pub fn solve_be(p: &StageProblem) -> Result<BellmanSolution> {
    let tree = p.tree.clone();
    let horizon = tree.horizon();
    let general_paths = match &p.objective {
        Objective::General(_) => Some(path_sums(p)?),
        Objective::StageAdditive(_) => None,
    };
    let mut nodes: Vec<Option<NodeSolution>> = vec![None; tree.len()];
    for t in (0..=horizon).rev() {
        let ids: Vec<usize> = tree.stage_range(t).collect();
        let n_t = p.dims[t];
        let solved = {
            let nodes_ref = &nodes;
            let paths = &general_paths;
            crate::par::try_map(&ids, |i| {
                let id = NodeId(i);
                let value = if tree.is_leaf(id) {
                    match paths {
                        Some(sums) => sums[i].clone(),
                        None => ConvexFn::zero(n_t),
                    }
                } else {
                    let kids: Vec<(f64, &ConvexFn)> = tree
                        .children(id)
                        .iter()
                        .map(|&c| (tree.prob(c), &nodes_ref[c.0].as_ref().unwrap().reduced))
                        .collect();
                    cond_expect_fn(&kids).map_err(|e| relabel_mass(e, &tree, id))?
                };
                let nodal = match &p.objective {
                    Objective::General(_) => value.clone(),
                    Objective::StageAdditive(costs) => {
                        let g = &costs[i];
                        if t == 0 {
                            g.add(&value)?
                        } else {
                            let prev = p.dims[t - 1];
                            let lift = value.compose_affine(&block_embedding(n_t, prev + n_t, prev), &DVector::zeros(n_t))?;
                            g.add(&lift)?
                        }
                    }
                };
                let m = nodal.partial_min_with(n_t, p.recession_policy).map_err(|e| e.at_node(id))?;
                Ok(NodeSolution {
                    value,
                    nodal,
                    reduced: m.value,
                    selector: m.selector,
                    lineality: m.lineality,
                    linear: m.linear,
                })
            })?
        };
        for (i, s) in ids.into_iter().zip(solved) {
            nodes[i] = Some(s);
        }
    }
    Ok(BellmanSolution { problem: p.clone(), nodes: nodes.into_iter().map(Option::unwrap).collect() })
}

fn relabel_mass(e: Error, tree: &ScenarioTree, id: NodeId) -> Error {
    match e {
        Error::ProbabilityMass { sum, .. } => Error::ProbabilityMass { node: tree.label(id).into(), sum },
        other => other.at_node(id),
    }
}

/// Leaf integrands of a general-mode problem: sums of the path terms, over `x^T`.
fn path_sums(p: &StageProblem) -> Result<Vec<ConvexFn>> {
    let tree = &p.tree;
    let Objective::General(terms) = &p.objective else { unreachable!() };
    let mut acc: Vec<Option<ConvexFn>> = vec![None; tree.len()];
    for id in tree.nodes() {
        let t = tree.stage(id);
        let dim = p.history_dim(t);
        let base = match tree.parent(id) {
            Some(par) => acc[par.0].as_ref().unwrap().extend(p.dims[t])?,
            None => ConvexFn::zero(dim),
        };
        acc[id.0] = Some(match &terms[id.0] {
            Some(f) => base.add(f)?,
            None => base,
        });
    }
    Ok(acc.into_iter().map(|f| f.unwrap()).collect())
}

/// Adapted decisions with per-node optimality residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub decisions: AdaptedProcess<Vec<f64>>,
    pub residuals: AdaptedProcess<f64>,
}

impl Policy {
    pub fn residual_max(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, (_, r)| m.max(*r))
    }
}

/// Input of node `id`'s selector: the history `x^{t-1}` or the previous decision.
fn selector_input(sol: &BellmanSolution, decisions: &[Option<Vec<f64>>], id: NodeId) -> Vec<f64> {
    let tree = sol.tree();
    match &sol.problem.objective {
        Objective::General(_) => {
            let path = tree.path(id);
            path[..path.len() - 1].iter().flat_map(|n| decisions[n.0].clone().unwrap()).collect()
        }
        Objective::StageAdditive(_) => match tree.parent(id) {
            Some(par) => decisions[par.0].clone().unwrap(),
            None => Vec::new(),
        },
    }
}

fn residual_at(sol: &BellmanSolution, id: NodeId, prefix: &[f64], x: &[f64]) -> Result<f64> {
    let node = sol.node(id);
    let mut full = prefix.to_vec();
    full.extend_from_slice(x);
    let achieved = node.nodal.eval(&full)?;
    let best = node.reduced.eval(prefix)?;
    if !achieved.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok((achieved - best).max(0.0))
}

/// Forward sweep through the node selectors.
pub fn extract_policy(sol: &BellmanSolution) -> Result<Policy> {
    let tree = sol.tree();
    let mut decisions: Vec<Option<Vec<f64>>> = vec![None; tree.len()];
    let mut residuals = vec![0.0; tree.len()];
    for id in tree.nodes() {
        let prefix = selector_input(sol, &decisions, id);
        let x = sol.node(id).selector.select(&prefix).map_err(|e| e.at_node(id))?;
        residuals[id.0] = residual_at(sol, id, &prefix, &x)?;
        decisions[id.0] = Some(x);
    }
    Ok(Policy {
        decisions: AdaptedProcess::full(tree, |id| decisions[id.0].clone().unwrap()),
        residuals: AdaptedProcess::full(tree, |id| residuals[id.0]),
    })
}

/// Residuals of arbitrary adapted decisions against the nodewise minima.
pub fn residuals(sol: &BellmanSolution, decisions: &AdaptedProcess<Vec<f64>>) -> Result<AdaptedProcess<f64>> {
    let tree = sol.tree();
    let dec: Vec<Option<Vec<f64>>> = tree.nodes().map(|id| Some(decisions[id].clone())).collect();
    let mut out = Vec::with_capacity(tree.len());
    for id in tree.nodes() {
        let prefix = selector_input(sol, &dec, id);
        out.push(residual_at(sol, id, &prefix, &decisions[id])?);
    }
    Ok(AdaptedProcess::full(tree, |id| out[id.0]))
}

/// True iff every nodal residual of `decisions` is at most `tol`.
pub fn verify_optimality(decisions: &AdaptedProcess<Vec<f64>>, sol: &BellmanSolution, tol: f64) -> Result<bool> {
    Ok(residuals(sol, decisions)?.iter().all(|(_, r)| *r <= tol))
}

/// `inf E h_t(x^t)` over decisions of stages `<= t` (for stage-additive
/// problems: stage costs up to `t` plus the cost-to-go at `t`).
pub fn optimum_value(sol: &BellmanSolution, t: usize) -> Result<f64> {
    if t == 0 {
        return Ok(sol.value());
    }
    let fp = truncated_program(sol, t)?;
    Ok(extensive::solve_extensive(&fp)?.value)
}

/// Flat program of the stage-`<= t` problem with the stage-`t` value functions as terminal terms.
pub fn truncated_program(sol: &BellmanSolution, t: usize) -> Result<FlatProgram> {
    let p = &sol.problem;
    let tree = &p.tree;
    let mut fp = FlatProgram::with_blocks(tree, &p.dims, t);
    match &p.objective {
        Objective::General(_) => {
            for id in tree.stage_nodes(t) {
                fp.push_term(tree.uncond_prob(id), &tree.path(id), sol.node(id).value.clone());
            }
        }
        Objective::StageAdditive(costs) => {
            for id in tree.nodes().filter(|&id| tree.stage(id) <= t) {
                fp.push_term(tree.uncond_prob(id), &p.term_blocks(id), costs[id.0].clone());
            }
            for id in tree.stage_nodes(t) {
                fp.push_term(tree.uncond_prob(id), &[id], sol.node(id).value.clone());
            }
        }
    }
    Ok(fp)
}

/// Where each `v_t` enters a node term: `(term node, block position, t, holder node)`.
fn shadow_slots(p: &StageProblem, v: &ShadowPrice) -> Result<Vec<(NodeId, usize, usize, NodeId)>> {
    let tree = &p.tree;
    let mut out = Vec::new();
    for t in 0..=tree.horizon() {
        let s = v.stage_of(t);
        for holder in tree.stage_nodes(s) {
            let owner = tree.ancestor_at(holder, t);
            let blocks = p.term_blocks(holder);
            let Some(pos) = blocks.iter().position(|&b| b == owner) else {
                return Err(Error::InvalidInput(format!(
                    "v_{t} lives at stage {s}, beyond the reach of stage-additive terms"
                )));
            };
            out.push((holder, pos, t, holder));
        }
    }
    Ok(out)
}

fn block_offset(p: &StageProblem, id: NodeId, pos: usize) -> usize {
    p.term_blocks(id)[..pos].iter().map(|&b| p.dims[p.tree.stage(b)]).sum()
}

/// Stage costs tilted by `-x_t·v_t`.
pub fn tilt_by_p(p: &StageProblem, v: &ShadowPrice) -> Result<StageProblem> {
    if let Some((stage, node)) = perp_violation(&p.tree, v) {
        return Err(Error::NotPerp { stage, node });
    }
    let slots = shadow_slots(p, v)?;
    let mut tilts: Vec<Option<Vec<f64>>> = vec![None; p.tree.len()];
    for (node, pos, t, holder) in slots {
        let off = block_offset(p, node, pos);
        let entry = tilts[node.0].get_or_insert_with(|| vec![0.0; p.term_dim(node)]);
        for (k, val) in v.parts[t][holder].iter().enumerate() {
            entry[off + k] -= val;
        }
    }
    let mut out = p.clone();
    match &mut out.objective {
        Objective::General(terms) => {
            for (i, tv) in tilts.into_iter().enumerate() {
                if let Some(tv) = tv {
                    let dim = tv.len();
                    let base = terms[i].take().unwrap_or_else(|| ConvexFn::zero(dim));
                    terms[i] = Some(base.tilt(&tv)?);
                }
            }
        }
        Objective::StageAdditive(costs) => {
            for (i, tv) in tilts.into_iter().enumerate() {
                if let Some(tv) = tv {
                    costs[i] = costs[i].tilt(&tv)?;
                }
            }
        }
    }
    Ok(out)
}

/// Lower-bound certificate `term >= λ x·v - m` at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBound {
    pub node: NodeId,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub lambda: f64,
    pub bounds: Vec<NodeBound>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearityVerdict {
    pub pass: bool,
    /// nodes whose zero-cost recession set is not linear
    pub nonlinear_nodes: Vec<NodeId>,
    /// lineality dimension of the recession recursion per node
    pub lineality_dims: Vec<usize>,
    pub failure: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub certificates: Vec<Certificate>,
    pub linearity: LinearityVerdict,
    pub feasible: bool,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.certificates.iter().all(|c| c.pass) && self.linearity.pass && self.feasible
    }
}

/// Diagnostics: nodewise lower-bound certificates for λ in {1-ε, 1, 1+ε},
/// linearity of the zero-cost recession set of the tilted problem, feasibility.
pub fn check_assumptions(p: &StageProblem, v: Option<&ShadowPrice>, eps: f64) -> Result<AssumptionReport> {
    let tree = &p.tree;
    let zero = ShadowPrice::zero(tree, &p.dims);
    let v = v.unwrap_or(&zero);
    if let Some((stage, node)) = perp_violation(tree, v) {
        return Err(Error::NotPerp { stage, node });
    }
    let slots = shadow_slots(p, v)?;
    let mut certificates = Vec::new();
    for lambda in [1.0 - eps, 1.0, 1.0 + eps] {
        let mut ys: Vec<Vec<f64>> = tree.nodes().map(|id| vec![0.0; p.term_dim(id)]).collect();
        for &(node, pos, t, holder) in &slots {
            let off = block_offset(p, node, pos);
            for (k, val) in v.parts[t][holder].iter().enumerate() {
                ys[node.0][off + k] += lambda * val;
            }
        }
        let mut bounds = Vec::new();
        for id in tree.nodes() {
            let m = match p.term(id) {
                Some(f) => f.conjugate(&ys[id.0])?,
                None => {
                    if ys[id.0].iter().all(|y| *y == 0.0) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
            };
            bounds.push(NodeBound { node: id, m });
        }
        let pass = bounds.iter().all(|b| b.m.is_finite());
        certificates.push(Certificate { lambda, bounds, pass });
    }
    let tilted = tilt_by_p(p, v)?;
    let rec = tilted.map_terms(|_, f| Ok(f.recession()))?.with_policy(RecessionPolicy::Annotate);
    let linearity = match solve_be(&rec) {
        Ok(sol) => LinearityVerdict {
            pass: sol.all_linear(),
            nonlinear_nodes: tree.nodes().filter(|&id| !sol.node(id).linear).collect(),
            lineality_dims: sol.nodes.iter().map(|n| n.lineality.dim()).collect(),
            failure: None,
        },
        Err(e) => LinearityVerdict {
            pass: false,
            nonlinear_nodes: e.node().into_iter().collect(),
            lineality_dims: Vec::new(),
            failure: Some(e),
        },
    };
    let feasible = extensive::flatten(p).feasible_point()?.is_some();
    Ok(AssumptionReport { certificates, linearity, feasible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexfn::{Halfspace, Piece, Polyhedral};
    use nalgebra::DVector;

    fn quad(q: &[f64], lin: &[f64], c: f64) -> ConvexFn {
        let d = lin.len();
        ConvexFn::quadratic(DMatrix::from_row_slice(d, d, q), DVector::from_column_slice(lin), c).unwrap()
    }

    /// terminal cost (x_0 - ξ)², ξ in {0, 2}
    fn tracking() -> StageProblem {
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![0.5, 0.5]]).unwrap());
        let terms = vec![None, Some(quad(&[2.0, 0.0, 0.0, 0.0], &[0.0, 0.0], 0.0)), Some(quad(&[2.0, 0.0, 0.0, 0.0], &[-4.0, 0.0], 4.0))];
        StageProblem::general(tree, vec![1, 1], terms).unwrap()
    }

    #[test]
    fn tracking_example() {
        let sol = solve_be(&tracking()).unwrap();
        let h0 = &sol.node(NodeId(0)).value;
        for x in [-1.0, 0.0, 1.0, 3.0] {
            assert!((h0.eval(&[x]).unwrap() - (x * x - 2.0 * x + 2.0)).abs() < 1e-12);
        }
        assert!((optimum_value(&sol, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!((optimum_value(&sol, 1).unwrap() - 1.0).abs() < 1e-10);
        let pol = extract_policy(&sol).unwrap();
        assert!((pol.decisions[NodeId(0)][0] - 1.0).abs() < 1e-12);
        // x_1 is free in the objective: least-norm choice
        assert_eq!(pol.decisions[NodeId(1)][0], 0.0);
        assert!(verify_optimality(&pol.decisions, &sol, 1e-8).unwrap());
        let mut bad = pol.decisions.clone();
        bad.get_mut(NodeId(0)).unwrap()[0] += 0.1;
        assert!(!verify_optimality(&bad, &sol, 1e-8).unwrap());
    }

    #[test]
    fn separable_abs_costs() {
        // deterministic chain; |x_t - a_t| costs -> value 0 ... shifted by constants
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![1.0], vec![1.0]]).unwrap());
        let abs = |a: f64, c: f64| {
            ConvexFn::Polyhedral(
                Polyhedral::new(1, vec![Piece::new(vec![1.0], -a + c), Piece::new(vec![-1.0], a + c)], vec![]).unwrap(),
            )
        };
        let lift = |f: ConvexFn, before: usize| {
            let m = block_embedding(1, before + 1, before);
            f.compose_affine(&m, &DVector::zeros(1)).unwrap()
        };
        let costs = vec![abs(1.0, 2.0), lift(abs(-1.0, 0.5), 1), lift(abs(0.3, 1.0), 1)];
        let p = StageProblem::stage_additive(tree, vec![1, 1, 1], costs).unwrap();
        let sol = solve_be(&p).unwrap();
        assert!((sol.value() - 3.5).abs() < 1e-10);
    }

    #[test]
    fn shortfall_gains_on_rising_market_is_nonlinear() {
        // s_0 = 1, s_1 in {2, 3}; loss (c - x Δs)^+ with c = 1 bounded below,
        // buying forever never costs -> one-sided zero-cost ray at the root
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![0.5, 0.5]]).unwrap());
        let leaf = |ds: f64| {
            ConvexFn::Polyhedral(
                Polyhedral::new(2, vec![Piece::new(vec![-ds, 0.0], 1.0), Piece::new(vec![0.0, 0.0], 0.0)], vec![]).unwrap(),
            )
        };
        let p = StageProblem::general(tree, vec![1, 1], vec![None, Some(leaf(1.0)), Some(leaf(2.0))]).unwrap();
        assert!(matches!(solve_be(&p), Err(Error::NonLinearRecession { node: Some(NodeId(0)) })));
        let report = check_assumptions(&p, None, 0.1).unwrap();
        assert!(!report.linearity.pass);
    }

    #[test]
    fn strictly_convex_instance_passes_checks() {
        let p = tracking();
        let p = p.map_terms(|_, f| f.add(&quad(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 0.0))).unwrap();
        let r = check_assumptions(&p, None, 0.1).unwrap();
        assert!(r.pass(), "{r:?}");
        assert!(r.linearity.lineality_dims.iter().all(|d| *d == 0));
    }

    #[test]
    fn zero_tilt_is_identity_and_non_perp_rejected() {
        let p = tracking();
        let z = ShadowPrice::zero(&p.tree, &p.dims);
        let q = tilt_by_p(&p, &z).unwrap();
        let (a, b) = (solve_be(&p).unwrap().value(), solve_be(&q).unwrap().value());
        assert_eq!(a, b);
        let mut bad = z.clone();
        bad.parts[0] = AdaptedProcess::at_stage(&p.tree, 0, |_| vec![1.0]);
        assert!(matches!(tilt_by_p(&p, &bad), Err(Error::NotPerp { .. })));
    }

    #[test]
    fn polyhedral_domain_example() {
        // min over x_0 in [0, 1] of E |x_0 - ξ|, ξ in {0.2, 0.9}
        let tree = Arc::new(ScenarioTree::stagewise(&[vec![0.5, 0.5]]).unwrap());
        let leaf = |xi: f64| {
            ConvexFn::Polyhedral(
                Polyhedral::new(1, vec![Piece::new(vec![1.0], -xi), Piece::new(vec![-1.0], xi)], vec![]).unwrap(),
            )
        };
        let root = ConvexFn::Polyhedral(Polyhedral::indicator(crate::convexfn::Inequalities::with_rows(
            1,
            vec![Halfspace::new(vec![1.0], 1.0), Halfspace::new(vec![-1.0], 0.0)],
        )));
        let p = StageProblem::general(tree, vec![1, 0], vec![Some(root), Some(leaf(0.2)), Some(leaf(0.9))]).unwrap();
        let sol = solve_be(&p).unwrap();
        assert!((sol.value() - 0.35).abs() < 1e-10);
        let pol = extract_policy(&sol).unwrap();
        assert!(pol.residual_max() < 1e-9);
    }
}
