//! Problems of Lagrange: stage costs `K_t(x_t, Δx_t)` with `x_{-1} = 0`,
//! solved by the value recursion `Ṽ_{t-1} = inf_{x_t} K_t(x_t, x_t - x_{t-1}) + V_t(x_t)`,
//! `V_{t-1} = E_{t-1} Ṽ_{t-1}`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::bellman::{solve_be, BellmanSolution, StageProblem};
use crate::convexfn::fm::{fm_project, DEFAULT_ROW_CAP};
use crate::convexfn::{ConvexFn, Halfspace, Inequalities, Piece, Polyhedral, RecessionPolicy};
use crate::error::{Error, Result};
use crate::tree::{perp_violation, AdaptedProcess, NodeId, ScenarioTree, ShadowPrice};

#[derive(Debug, Clone)]
pub struct LagrangeInstance {
    pub tree: Arc<ScenarioTree>,
    pub dim: usize,
    /// per node, over `(x_t, Δx_t)`
    pub k: Vec<ConvexFn>,
}

impl LagrangeInstance {
    pub fn new(tree: Arc<ScenarioTree>, dim: usize, k: Vec<ConvexFn>) -> Result<Self> {
        if k.len() != tree.len() {
            return Err(Error::InvalidInput(format!("expected {} stage costs, got {}", tree.len(), k.len())));
        }
        if let Some(bad) = k.iter().find(|f| f.dim() != 2 * dim) {
            return Err(Error::DimensionMismatch { expected: 2 * dim, found: bad.dim() });
        }
        Ok(LagrangeInstance { tree, dim, k })
    }

    /// Stage-additive form: `g(x_{t-1}, x_t) = K_t(x_t, x_t - x_{t-1})`, root `K_0(x_0, x_0)`.
    pub fn to_stage_problem(&self) -> Result<StageProblem> {
        let d = self.dim;
        let mut root_map = DMatrix::zeros(2 * d, d);
        root_map.view_mut((0, 0), (d, d)).fill_with_identity();
        root_map.view_mut((d, 0), (d, d)).fill_with_identity();
        // (x_{t-1}, x_t) -> (x_t, x_t - x_{t-1})
        let mut step = DMatrix::zeros(2 * d, 2 * d);
        step.view_mut((0, d), (d, d)).fill_with_identity();
        step.view_mut((d, 0), (d, d)).copy_from(&(-DMatrix::<f64>::identity(d, d)));
        step.view_mut((d, d), (d, d)).fill_with_identity();
        let costs = self
            .tree
            .nodes()
            .map(|id| {
                let map = if id == self.tree.root() { &root_map } else { &step };
                self.k[id.0].compose_affine(map, &DVector::zeros(2 * d))
            })
            .collect::<Result<Vec<_>>>()?;
        StageProblem::stage_additive(self.tree.clone(), vec![d; self.tree.horizon() + 1], costs)
    }

    pub fn recession(&self) -> LagrangeInstance {
        LagrangeInstance { k: self.k.iter().map(|f| f.recession()).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct ValueV {
    /// `V_t` per node (zero on the leaves)
    pub v: Vec<ConvexFn>,
    /// `Ṽ_{t-1}` attached to the stage-`t` node where it is computed
    pub v_tilde: Vec<ConvexFn>,
    pub solution: BellmanSolution,
}

impl ValueV {
    pub fn value(&self) -> f64 {
        self.solution.value()
    }
}

pub fn solve_lagrange(inst: &LagrangeInstance) -> Result<ValueV> {
    solve_lagrange_with(inst, RecessionPolicy::Strict)
}

pub fn solve_lagrange_with(inst: &LagrangeInstance, policy: RecessionPolicy) -> Result<ValueV> {
    let sol = solve_be(&inst.to_stage_problem()?.with_policy(policy))?;
    Ok(ValueV {
        v: sol.nodes.iter().map(|n| n.value.clone()).collect(),
        v_tilde: sol.nodes.iter().map(|n| n.reduced.clone()).collect(),
        solution: sol,
    })
}

/// Polyhedral cone `C` in either representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    /// `{z : H z <= 0}`
    Inequalities(DMatrix<f64>),
    /// `{G λ : λ >= 0}`, generators as columns
    Generators(DMatrix<f64>),
    NonNegative,
    Zero,
    Free,
}

impl Cone {
    /// Rows `H` with `C = {z : H z <= 0}`.
    pub fn rows(&self, dim: usize) -> Result<DMatrix<f64>> {
        Ok(match self {
            Cone::Inequalities(h) => {
                if h.ncols() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: h.ncols() });
                }
                h.clone()
            }
            Cone::NonNegative => -DMatrix::<f64>::identity(dim, dim),
            Cone::Zero => {
                let mut h = DMatrix::zeros(2 * dim, dim);
                h.view_mut((0, 0), (dim, dim)).fill_with_identity();
                h.view_mut((dim, 0), (dim, dim)).copy_from(&(-DMatrix::<f64>::identity(dim, dim)));
                h
            }
            Cone::Free => DMatrix::zeros(0, dim),
            Cone::Generators(g) => {
                if g.nrows() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: g.nrows() });
                }
                // project {(z, λ) : z = G λ, λ >= 0} onto z
                let k = g.ncols();
                let mut sys = Inequalities::new(dim + k);
                for i in 0..dim {
                    let mut row = vec![0.0; dim + k];
                    row[i] = 1.0;
                    for j in 0..k {
                        row[dim + j] = -g[(i, j)];
                    }
                    sys.push(row.clone(), 0.0);
                    sys.push(row.iter().map(|v| -v).collect(), 0.0);
                }
                for j in 0..k {
                    let mut row = vec![0.0; dim + k];
                    row[dim + j] = -1.0;
                    sys.push(row, 0.0);
                }
                let proj = fm_project(&sys, k, DEFAULT_ROW_CAP)?;
                let rows: Vec<Vec<f64>> = proj.rows.into_iter().map(|r| r.coef).collect();
                crate::linalg::from_rows(&rows, dim)
            }
        })
    }
}

/// Node data of a block-diagonal stochastic LP:
/// cost `c·x_t` subject to `T Δx_t + W x_t - b ∈ C`.
#[derive(Debug, Clone)]
pub struct LpStage {
    pub t: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub cone: Cone,
}

impl LpStage {
    /// `K(x, Δx)` as a polyhedral function over `(x, Δx)`.
    pub fn cost(&self, dim: usize) -> Result<ConvexFn> {
        let r = self.b.len();
        if self.t.shape() != (r, dim) || self.w.shape() != (r, dim) || self.c.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: self.c.len() });
        }
        let h = self.cone.rows(r)?;
        let on_x = &h * &self.w;
        let on_dx = &h * &self.t;
        let rhs = &h * &self.b;
        let rows = (0..h.nrows())
            .map(|i| {
                let mut coef: Vec<f64> = on_x.row(i).iter().copied().collect();
                coef.extend(on_dx.row(i).iter().copied());
                Halfspace::new(coef, rhs[i])
            })
            .collect();
        let mut grad: Vec<f64> = self.c.iter().copied().collect();
        grad.resize(2 * dim, 0.0);
        Ok(ConvexFn::Polyhedral(Polyhedral::new(2 * dim, vec![Piece::new(grad, 0.0)], rows)?))
    }
}

pub fn lp_instance(tree: Arc<ScenarioTree>, dim: usize, stages: &[LpStage]) -> Result<LagrangeInstance> {
    let k = stages.iter().map(|s| s.cost(dim)).collect::<Result<Vec<_>>>()?;
    LagrangeInstance::new(tree, dim, k)
}

/// Classic stochastic-LP recursion through polyhedral partial minimization.
pub fn lp_recursion(tree: Arc<ScenarioTree>, dim: usize, stages: &[LpStage]) -> Result<ValueV> {
    solve_lagrange(&lp_instance(tree, dim, stages)?)
}

/// `m_t` for the bound `K_t(x, Δx) >= x·(λ p_t + Δy_{t+1}) + Δx·y_t - m_t`,
/// evaluated at the node where `p_t`, `y_t` and `y_{t+1}` are all known.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBound {
    pub stage: usize,
    pub node: NodeId,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeCertificate {
    pub lambda: f64,
    pub bounds: Vec<LagrangeBound>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeReport {
    pub certificates: Vec<LagrangeCertificate>,
    /// zero-cost recession set passes the per-node linearity test
    pub linear: bool,
    pub nonlinear_nodes: Vec<NodeId>,
    /// lineality dimension per node (empty when the recession recursion failed)
    pub lineality_dims: Vec<usize>,
}

impl LagrangeReport {
    pub fn pass(&self) -> bool {
        self.linear && self.certificates.iter().all(|c| c.pass)
    }
}

/// Lower-bound certificates for `λ ∈ {1 - ε, 1 + ε}` and the recession-set verdict.
/// `y` is adapted (`y_t` on stage `t`); `y_{T+1} = 0`.
pub fn check_lagrange_bounds(
    inst: &LagrangeInstance,
    v: &ShadowPrice,
    y: &AdaptedProcess<Vec<f64>>,
    eps: f64,
) -> Result<LagrangeReport> {
    let tree = &inst.tree;
    if let Some((stage, node)) = perp_violation(tree, v) {
        return Err(Error::NotPerp { stage, node });
    }
    let horizon = tree.horizon();
    let d = inst.dim;
    let mut certificates = Vec::new();
    for lambda in [1.0 - eps, 1.0 + eps] {
        let mut bounds = Vec::new();
        for t in 0..=horizon {
            let s = v.stage_of(t).max((t + 1).min(horizon));
            for holder in tree.stage_nodes(s) {
                let owner = tree.ancestor_at(holder, t);
                let p = &v.parts[t][tree.ancestor_at(holder, v.stage_of(t))];
                let y_now = &y[owner];
                let y_next: Vec<f64> =
                    if t < horizon { y[tree.ancestor_at(holder, t + 1)].clone() } else { vec![0.0; d] };
                let mut dual: Vec<f64> = (0..d).map(|i| lambda * p[i] + y_next[i] - y_now[i]).collect();
                dual.extend_from_slice(y_now);
                let m = inst.k[owner.0].conjugate(&dual)?;
                bounds.push(LagrangeBound { stage: t, node: holder, m });
            }
        }
        let pass = bounds.iter().all(|b| b.m.is_finite());
        certificates.push(LagrangeCertificate { lambda, bounds, pass });
    }
    let (linear, nonlinear_nodes, lineality_dims) = match solve_lagrange_with(&inst.recession(), RecessionPolicy::Annotate) {
        Ok(rec) => {
            let bad: Vec<NodeId> = tree.nodes().filter(|&id| !rec.solution.node(id).linear).collect();
            (bad.is_empty(), bad, rec.solution.nodes.iter().map(|n| n.lineality.dim()).collect())
        }
        Err(e) => (false, e.node().into_iter().collect(), Vec::new()),
    };
    Ok(LagrangeReport { certificates, linear, nonlinear_nodes, lineality_dims })
}
