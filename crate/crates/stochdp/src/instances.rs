//! Build core problem objects from tree-file node data.

use nalgebra::{DMatrix, DVector};

use stochdp_core::bellman::StageProblem;
use stochdp_core::control::{oc_as_stage_problem, ControlSystem, LqCosts};
use stochdp_core::convexfn::{ConvexFn, Halfspace, Inequalities, Quadratic};
use stochdp_core::extensive::FlatProgram;
use stochdp_core::hedging::MarketModel;
use stochdp_core::lagrange::{lp_instance, Cone, LagrangeInstance, LpStage};
use stochdp_core::stopping::ros_problem;
use stochdp_core::{AdaptedProcess, NodeId};

use crate::format::{Instance, ProblemKind};
use crate::CliError;

/// Any instance kind except hedging, as a problem for the generic engine.
pub fn stage_problem(inst: &Instance) -> Result<StageProblem, CliError> {
    let tree = inst.tree.clone();
    Ok(match inst.kind()? {
        ProblemKind::General => {
            let terms = tree
                .nodes()
                .map(|id| if inst.has(id, "h") { inst.function(id, "h").map(Some) } else { Ok(None) })
                .collect::<Result<Vec<_>, _>>()?;
            StageProblem::general(tree, stage_dims(inst)?, terms)?
        }
        ProblemKind::StageAdditive => {
            let costs = tree.nodes().map(|id| inst.function(id, "g")).collect::<Result<Vec<_>, _>>()?;
            StageProblem::stage_additive(tree, stage_dims(inst)?, costs)?
        }
        ProblemKind::Lagrange => lagrange(inst)?.to_stage_problem()?,
        ProblemKind::Control => {
            let (sys, costs) = control(inst)?;
            oc_as_stage_problem(&sys, &costs.to_convex(&sys)?)?
        }
        ProblemKind::Stopping => ros_problem(tree, &reward(inst)?)?,
        ProblemKind::Hedge => {
            return Err(CliError::Validation("hedging instances are handled by the `hedge` command".into()))
        }
    })
}

fn stage_dims(inst: &Instance) -> Result<Vec<usize>, CliError> {
    let dims = inst.dims();
    if dims.len() != inst.tree.horizon() + 1 {
        return Err(CliError::Validation(format!(
            "problem header needs one decision dimension per stage ({} given, horizon {})",
            dims.len(),
            inst.tree.horizon()
        )));
    }
    Ok(dims)
}

/// `K` functions, or LP data `T, W, b, c` with cone `C` (`"nonneg"`, `"zero"`,
/// `"free"` or inequality rows) or generator columns `C_gen`.
pub fn lagrange(inst: &Instance) -> Result<LagrangeInstance, CliError> {
    let tree = inst.tree.clone();
    let root = tree.root();
    if inst.has(root, "K") {
        let k = tree.nodes().map(|id| inst.function(id, "K")).collect::<Result<Vec<_>, _>>()?;
        let dim = match inst.dims().first() {
            Some(d) => *d,
            None => k[0].dim() / 2,
        };
        return Ok(LagrangeInstance::new(tree, dim, k)?);
    }
    let dim = match inst.dims().first() {
        Some(d) => *d,
        None => inst.vector(root, "c")?.len(),
    };
    let stages = tree
        .nodes()
        .map(|id| {
            let b = DVector::from_vec(inst.vector(id, "b")?);
            let cone = if inst.has(id, "C_gen") {
                Cone::Generators(inst.matrix(id, "C_gen", b.len())?.transpose())
            } else if inst.has(id, "C") {
                match inst.text(id, "C") {
                    Ok("nonneg") => Cone::NonNegative,
                    Ok("zero") => Cone::Zero,
                    Ok("free") => Cone::Free,
                    Ok(other) => {
                        return Err(CliError::Validation(format!("node {}: unknown cone {other:?}", tree.label(id))))
                    }
                    Err(_) => Cone::Inequalities(inst.matrix(id, "C", b.len())?),
                }
            } else {
                Cone::NonNegative
            };
            Ok(LpStage {
                t: inst.matrix(id, "T", dim)?,
                w: inst.matrix(id, "W", dim)?,
                c: DVector::from_vec(inst.vector(id, "c")?),
                b,
                cone,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(lp_instance(tree, dim, &stages)?)
}

/// `A, B, W` (zero when absent), cost weights `Q, R`, optional root `X0`.
pub fn control(inst: &Instance) -> Result<(ControlSystem, LqCosts), CliError> {
    let tree = inst.tree.clone();
    let root = tree.root();
    let n = side(inst, root, "Q")?;
    let m = side(inst, root, "R")?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut w = Vec::new();
    let mut q = Vec::new();
    let mut r = Vec::new();
    for id in tree.nodes() {
        a.push(if inst.has(id, "A") { inst.matrix(id, "A", n)? } else { DMatrix::zeros(n, n) });
        b.push(if inst.has(id, "B") { inst.matrix(id, "B", m)? } else { DMatrix::zeros(n, m) });
        w.push(if inst.has(id, "W") { DVector::from_vec(inst.vector(id, "W")?) } else { DVector::zeros(n) });
        q.push(inst.matrix(id, "Q", n)?);
        r.push(inst.matrix(id, "R", m)?);
    }
    let mut sys = ControlSystem::new(tree, n, m, a, b, w)?;
    if inst.has(root, "X0") {
        sys = sys.with_initial_state(DVector::from_vec(inst.vector(root, "X0")?));
    }
    Ok((sys, LqCosts { q, r }))
}

/// Side length of a square matrix entry (a scalar counts as `1x1`).
fn side(inst: &Instance, id: NodeId, key: &str) -> Result<usize, CliError> {
    match inst.shape(id, key) {
        Some((r, c)) if r == c => Ok(r),
        _ => Err(CliError::Validation(format!("node {}: `{key}` must be a square matrix", inst.tree.label(id)))),
    }
}

pub fn reward(inst: &Instance) -> Result<AdaptedProcess<f64>, CliError> {
    let tree = &inst.tree;
    let values = tree.nodes().map(|id| inst.scalar(id, "R")).collect::<Result<Vec<_>, _>>()?;
    Ok(AdaptedProcess::full(tree, |id| values[id.0]))
}

/// Prices `s`, optional rows `D` (each `[coef..., rhs]` meaning `coef·x <= rhs`),
/// leaf claims `c` (zero when absent).
pub fn market(inst: &Instance) -> Result<MarketModel, CliError> {
    let tree = inst.tree.clone();
    let prices = tree.nodes().map(|id| inst.vector(id, "s")).collect::<Result<Vec<_>, _>>()?;
    let claims = tree
        .leaves()
        .map(|id| if inst.has(id, "c") { inst.scalar(id, "c") } else { Ok(0.0) })
        .collect::<Result<Vec<_>, _>>()?;
    let first_leaf = tree.stage_range(tree.horizon()).start;
    let m = MarketModel::new(
        tree.clone(),
        AdaptedProcess::full(&tree, |id| prices[id.0].clone()),
        AdaptedProcess::at_stage(&tree, tree.horizon(), |id| claims[id.0 - first_leaf]),
    )?;
    let dim = m.assets();
    let sets = tree
        .nodes()
        .map(|id| {
            if !inst.has(id, "D") || tree.is_leaf(id) {
                return Ok(Inequalities::new(dim));
            }
            let rows = inst.matrix(id, "D", dim + 1)?;
            let rows = (0..rows.nrows())
                .map(|i| Halfspace::new(rows.row(i).iter().take(dim).copied().collect(), rows[(i, dim)]))
                .collect();
            Ok(Inequalities::with_rows(dim, rows))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(m.with_constraints(sets)?)
}

/// Deterministic equivalent of quadratic hedging `E scale·(c - Σ x_t·Δs_{t+1})²`
/// over positions at the trading nodes (positions must be unconstrained).
pub fn quadratic_hedge_program(m: &MarketModel, scale: f64) -> Result<(FlatProgram, Vec<Option<usize>>), CliError> {
    let loss = Quadratic::new(DMatrix::from_element(1, 1, 2.0 * scale), DVector::zeros(1), 0.0)?;
    Ok(hedge_program(m, &ConvexFn::Quadratic(loss)))
}

/// `E V(c - Σ x_t·Δs_{t+1})` over unconstrained positions at the trading nodes,
/// for a one-dimensional `loss`. Also returns each node's first variable.
pub fn hedge_program(m: &MarketModel, loss: &ConvexFn) -> (FlatProgram, Vec<Option<usize>>) {
    let tree = &m.tree;
    let dim = m.assets();
    let mut slot = vec![None; tree.len()];
    let mut n = 0;
    for id in tree.nodes().filter(|&id| !tree.is_leaf(id)) {
        slot[id.0] = Some(n);
        n += dim;
    }
    let mut fp = FlatProgram::new(n);
    for leaf in tree.leaves() {
        let path = tree.path(leaf);
        let mut vars = Vec::new();
        let mut row = Vec::new();
        for w in path.windows(2) {
            let ds = m.increment(w[1]);
            let start = slot[w[0].0].expect("trading node");
            for j in 0..dim {
                vars.push(start + j);
                row.push(-ds[j]);
            }
        }
        // u = c - gains
        let map = DMatrix::from_row_slice(1, row.len(), &row);
        let w = DVector::from_element(1, m.claim[leaf]);
        fp.push_mapped(tree.uncond_prob(leaf), vars, map, w, loss.clone());
    }
    (fp, slot)
}
