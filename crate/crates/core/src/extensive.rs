//! Deterministic-equivalent form: one decision block per node, objective
//! `Σ P(node) · term(node)`, solved directly without any recursion.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::bellman::StageProblem;
use crate::convexfn::{ConvexFn, Polyhedral, Quadratic};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lp::{Lp, LpOutcome};
use crate::tree::{AdaptedProcess, NodeId, ScenarioTree};

/// `weight · f(M z[vars] + w)`; no map means `f(z[vars])`.
#[derive(Debug, Clone)]
pub struct FlatTerm {
    pub weight: f64,
    pub vars: Vec<usize>,
    pub map: Option<(DMatrix<f64>, DVector<f64>)>,
    pub f: ConvexFn,
}

impl FlatTerm {
    fn arg(&self, z: &[f64]) -> Vec<f64> {
        let local: Vec<f64> = self.vars.iter().map(|&v| z[v]).collect();
        match &self.map {
            None => local,
            Some((m, w)) => linalg::to_vec(&(m * DVector::from_vec(local) + w)),
        }
    }

    /// `(G, w)` with the term argument `G z + w` in global coordinates.
    fn global_map(&self, nvars: usize) -> (DMatrix<f64>, DVector<f64>) {
        let rows = self.f.dim();
        let mut g = DMatrix::zeros(rows, nvars);
        match &self.map {
            None => {
                for (i, &v) in self.vars.iter().enumerate() {
                    g[(i, v)] = 1.0;
                }
                (g, DVector::zeros(rows))
            }
            Some((m, w)) => {
                for (j, &v) in self.vars.iter().enumerate() {
                    for i in 0..rows {
                        g[(i, v)] += m[(i, j)];
                    }
                }
                (g, w.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FlatProgram {
    pub nvars: usize,
    /// variable range of each node's decision (`None` past the last stage kept)
    pub blocks: Vec<Option<Range<usize>>>,
    pub terms: Vec<FlatTerm>,
}

impl FlatProgram {
    pub fn new(nvars: usize) -> Self {
        FlatProgram { nvars, blocks: Vec::new(), terms: Vec::new() }
    }

    /// One block per node of stage `<= last_stage`, in node order.
    pub fn with_blocks(tree: &ScenarioTree, dims: &[usize], last_stage: usize) -> Self {
        let mut next = 0;
        let blocks = tree
            .nodes()
            .map(|id| {
                let t = tree.stage(id);
                (t <= last_stage).then(|| {
                    let r = next..next + dims[t];
                    next += dims[t];
                    r
                })
            })
            .collect();
        FlatProgram { nvars: next, blocks, terms: Vec::new() }
    }

    pub fn block(&self, id: NodeId) -> Range<usize> {
        self.blocks[id.0].clone().expect("node outside the flattened horizon")
    }

    /// Term reading the concatenated blocks of `nodes`.
    pub fn push_term(&mut self, weight: f64, nodes: &[NodeId], f: ConvexFn) {
        let vars = nodes.iter().flat_map(|&n| self.block(n)).collect();
        self.terms.push(FlatTerm { weight, vars, map: None, f });
    }

    pub fn push_mapped(&mut self, weight: f64, vars: Vec<usize>, m: DMatrix<f64>, w: DVector<f64>, f: ConvexFn) {
        self.terms.push(FlatTerm { weight, vars, map: Some((m, w)), f });
    }

    /// Objective value; domain violations give `+inf` regardless of weight.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.nvars {
            return Err(Error::DimensionMismatch { expected: self.nvars, found: z.len() });
        }
        let mut total = 0.0;
        for t in &self.terms {
            let v = t.f.eval(&t.arg(z))?;
            if !v.is_finite() {
                return Ok(f64::INFINITY);
            }
            if t.weight != 0.0 {
                total += t.weight * v;
            }
        }
        Ok(total)
    }

    /// Flat vector of an adapted process.
    pub fn pack(&self, x: &AdaptedProcess<Vec<f64>>) -> Vec<f64> {
        let mut z = vec![0.0; self.nvars];
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(b) = b {
                z[b.clone()].copy_from_slice(&x[NodeId(i)]);
            }
        }
        z
    }

    /// Inverse of [`FlatProgram::pack`] over the stages that have blocks.
    pub fn unpack(&self, tree: &ScenarioTree, z: &[f64]) -> AdaptedProcess<Vec<f64>> {
        let last = (0..=tree.horizon())
            .rev()
            .find(|&t| tree.stage_nodes(t).all(|id| self.blocks[id.0].is_some()))
            .unwrap_or(0);
        AdaptedProcess::from_fn(tree, 0, last, |id| z[self.block(id)].to_vec())
    }

    fn linear_system(&self) -> Result<Option<Lp>> {
        let mut lp = Lp::new(self.nvars);
        for term in &self.terms {
            let (g, w) = term.global_map(self.nvars);
            for part in split(&term.f) {
                match part {
                    Part::Quad(q) => {
                        let q = q.compose_affine(&g, &w);
                        if !q.domain.consistent {
                            return Ok(None);
                        }
                        for i in 0..q.domain.a.nrows() {
                            lp.eq(q.domain.a.row(i).iter().copied().collect(), q.domain.b[i]);
                        }
                    }
                    Part::Poly(p) => {
                        for r in p.compose_affine(&g, &w).domain.rows {
                            lp.le(r.coef, r.rhs);
                        }
                    }
                }
            }
        }
        Ok(Some(lp))
    }

    /// A point where every term is finite, if one exists.
    pub fn feasible_point(&self) -> Result<Option<Vec<f64>>> {
        let Some(lp) = self.linear_system()? else { return Ok(None) };
        if lp.constraints.is_empty() {
            return Ok(Some(vec![0.0; self.nvars]));
        }
        Ok(match lp.solve()? {
            LpOutcome::Optimal { x, .. } => Some(x),
            LpOutcome::Infeasible => None,
            LpOutcome::Unbounded => Some(vec![0.0; self.nvars]),
        })
    }
}

enum Part<'a> {
    Quad(&'a Quadratic),
    Poly(Polyhedral),
}

fn split(f: &ConvexFn) -> Vec<Part<'_>> {
    match f {
        ConvexFn::Quadratic(q) => vec![Part::Quad(q)],
        ConvexFn::Polyhedral(p) => vec![Part::Poly(p.clone())],
        ConvexFn::Sampled1D(s) => vec![Part::Poly(s.to_polyhedral())],
        ConvexFn::Sum(parts) => parts.iter().flat_map(split).collect(),
    }
}

/// Whole tree, every node term weighted by its unconditional probability.
pub fn flatten(p: &StageProblem) -> FlatProgram {
    let tree = &p.tree;
    let mut fp = FlatProgram::with_blocks(tree, &p.dims, tree.horizon());
    for id in tree.nodes() {
        if let Some(f) = p.term(id) {
            fp.push_term(tree.uncond_prob(id), &p.term_blocks(id), f.clone());
        }
    }
    fp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Kkt,
    Simplex,
    CoordinateDescent,
}

#[derive(Debug, Clone)]
pub struct ExtensiveSolution {
    pub value: f64,
    pub point: Vec<f64>,
    pub method: Method,
    /// `‖K z - rhs‖_inf` of the KKT system (quadratic programs only)
    pub kkt_residual: Option<f64>,
    /// line searches used by coordinate descent
    pub iterations: usize,
}

/// Solve by the exact path the term backends allow: KKT for quadratics,
/// simplex when nothing is curved, coordinate descent otherwise.
pub fn solve_extensive(fp: &FlatProgram) -> Result<ExtensiveSolution> {
    let mut curved = false;
    let mut kinked = false;
    for t in &fp.terms {
        for part in split(&t.f) {
            match part {
                Part::Quad(q) => curved |= t.weight != 0.0 && q.q.iter().any(|v| *v != 0.0),
                Part::Poly(_) => kinked = true,
            }
        }
    }
    match (curved, kinked) {
        (_, false) => solve_kkt(fp),
        (false, true) => solve_lp(fp),
        (true, true) => solve_descent(fp),
    }
}

fn solve_kkt(fp: &FlatProgram) -> Result<ExtensiveSolution> {
    let n = fp.nvars;
    let mut total = Quadratic::zero(n);
    for t in &fp.terms {
        let (g, w) = t.global_map(n);
        for part in split(&t.f) {
            if let Part::Quad(q) = part {
                total = total.add(&q.compose_affine(&g, &w).scale(t.weight));
            }
        }
    }
    if !total.domain.consistent {
        return Err(Error::Infeasible { node: None });
    }
    let a = &total.domain.a;
    let m = a.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&total.q);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&total.lin));
    rhs.rows_mut(n, m).copy_from(&total.domain.b);
    let kp = linalg::pinv(&k);
    let mut sol = &kp * &rhs;
    // one step of refinement
    let r = &rhs - &k * &sol;
    sol += &kp * r;
    let residual = (&k * &sol - &rhs).amax();
    let scale = 1.0 + rhs.amax().max(k.amax());
    if residual > 1e-8 * scale {
        return Err(Error::Unbounded);
    }
    let z = sol.rows(0, n).into_owned();
    Ok(ExtensiveSolution {
        value: total.eval(&z),
        point: linalg::to_vec(&z),
        method: Method::Kkt,
        kkt_residual: Some(residual),
        iterations: 0,
    })
}

fn solve_lp(fp: &FlatProgram) -> Result<ExtensiveSolution> {
    let n = fp.nvars;
    let mut objective = vec![0.0; n];
    let mut constant = 0.0;
    let mut rows: Vec<(Vec<f64>, usize, f64)> = Vec::new(); // (z coef, epigraph var, rhs)
    let mut eqs: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut les: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut epi_weights: Vec<f64> = Vec::new();
    for t in &fp.terms {
        let (g, w) = t.global_map(n);
        for part in split(&t.f) {
            match part {
                Part::Quad(q) => {
                    let q = q.compose_affine(&g, &w);
                    if !q.domain.consistent {
                        return Err(Error::Infeasible { node: None });
                    }
                    for i in 0..q.domain.a.nrows() {
                        eqs.push((q.domain.a.row(i).iter().copied().collect(), q.domain.b[i]));
                    }
                    if t.weight != 0.0 {
                        objective.iter_mut().zip(q.lin.iter()).for_each(|(o, l)| *o += t.weight * l);
                        constant += t.weight * q.c;
                    }
                }
                Part::Poly(p) => {
                    let p = p.compose_affine(&g, &w);
                    les.extend(p.domain.rows.into_iter().map(|r| (r.coef, r.rhs)));
                    if t.weight == 0.0 || p.pieces.is_empty() {
                        continue;
                    }
                    if p.pieces.len() == 1 {
                        let pc = &p.pieces[0];
                        objective.iter_mut().zip(&pc.grad).for_each(|(o, g)| *o += t.weight * g);
                        constant += t.weight * pc.offset;
                    } else {
                        let e = epi_weights.len();
                        epi_weights.push(t.weight);
                        rows.extend(p.pieces.into_iter().map(|pc| (pc.grad, e, -pc.offset)));
                    }
                }
            }
        }
    }
    let total = n + epi_weights.len();
    let mut lp = Lp::new(total);
    lp.objective[..n].copy_from_slice(&objective);
    lp.objective[n..].copy_from_slice(&epi_weights);
    let widen = |c: Vec<f64>| {
        let mut c = c;
        c.resize(total, 0.0);
        c
    };
    for (c, b) in eqs {
        lp.eq(widen(c), b);
    }
    for (c, b) in les {
        lp.le(widen(c), b);
    }
    for (c, e, b) in rows {
        let mut c = widen(c);
        c[n + e] = -1.0;
        lp.le(c, b);
    }
    match lp.solve()? {
        LpOutcome::Optimal { x, value } => Ok(ExtensiveSolution {
            value: value + constant,
            point: x[..n].to_vec(),
            method: Method::Simplex,
            kkt_residual: None,
            iterations: 0,
        }),
        LpOutcome::Infeasible => Err(Error::Infeasible { node: None }),
        LpOutcome::Unbounded => Err(Error::Unbounded),
    }
}

const DESCENT_MAX_SEARCHES: usize = 100_000;
const DESCENT_TOL: f64 = 1e-10;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Projected coordinate descent: equalities are eliminated through a null-space
/// parametrization, inequalities act as `+inf` walls for the line searches.
fn solve_descent(fp: &FlatProgram) -> Result<ExtensiveSolution> {
    let n = fp.nvars;
    let start = fp.feasible_point()?.ok_or(Error::Infeasible { node: None })?;
    let lp = fp.linear_system()?.ok_or(Error::Infeasible { node: None })?;
    let eq_rows: Vec<Vec<f64>> =
        lp.constraints.iter().filter(|c| c.cmp == crate::lp::Cmp::Eq).map(|c| c.coef.clone()).collect();
    let basis = if eq_rows.is_empty() {
        DMatrix::identity(n, n)
    } else {
        linalg::null_space(&linalg::from_rows(&eq_rows, n))
    };
    let k = basis.ncols();
    let z0 = DVector::from_vec(start);
    let objective = |y: &DVector<f64>| -> Result<f64> { fp.eval(linalg::to_vec(&(&z0 + &basis * y)).as_slice()) };

    let (y, value, searches) = descend(&objective, k)?;
    Ok(ExtensiveSolution {
        value,
        point: linalg::to_vec(&(&z0 + &basis * &y)),
        method: Method::CoordinateDescent,
        kkt_residual: None,
        iterations: searches,
    })
}

/// Coordinate descent from the origin of `R^k`: golden-section searches along
/// the axes, then along `e_i ± e_j` once the axes stall.
pub(crate) fn descend(objective: &impl Fn(&DVector<f64>) -> Result<f64>, k: usize) -> Result<(DVector<f64>, f64, usize)> {
    let mut y = DVector::zeros(k);
    let mut value = objective(&y)?;
    if !value.is_finite() {
        return Err(Error::Infeasible { node: None });
    }
    let dirs: Vec<DVector<f64>> = (0..k).map(|j| DVector::from_fn(k, |i, _| f64::from(i == j))).collect();
    let pairs: Vec<DVector<f64>> = (0..k)
        .flat_map(|i| (i + 1..k).flat_map(move |j| [(i, j, 1.0), (i, j, -1.0)]))
        .map(|(i, j, s)| DVector::from_fn(k, |r, _| if r == i { 1.0 } else if r == j { s } else { 0.0 }))
        .collect();
    let mut searches = 0;
    let mut use_pairs = false;
    loop {
        let before = value;
        let set: &[DVector<f64>] = if use_pairs { &pairs } else { &dirs };
        for d in set {
            searches += 1;
            if searches > DESCENT_MAX_SEARCHES {
                return Err(Error::IterationLimit);
            }
            let (step, v) = line_search(objective, &y, d, value)?;
            if v < value {
                y += d * step;
                value = v;
            }
        }
        let gain = before - value;
        if gain > DESCENT_TOL * (1.0 + value.abs()) {
            use_pairs = false;
        } else if use_pairs || k < 2 {
            break;
        } else {
            use_pairs = true;
        }
    }
    Ok((y, value, searches))
}

/// Minimize `s -> F(y + s d)`; returns the step and its value.
fn line_search(
    f: &impl Fn(&DVector<f64>) -> Result<f64>,
    y: &DVector<f64>,
    d: &DVector<f64>,
    f0: f64,
) -> Result<(f64, f64)> {
    let phi = |s: f64| f(&(y + d * s));
    let mut h = 1e-2 * (1.0 + y.amax());
    // shrink until one side is finite
    let (mut fr, mut fl) = (phi(h)?, phi(-h)?);
    while !fr.is_finite() && !fl.is_finite() {
        h *= 0.1;
        if h < 1e-14 {
            return Ok((0.0, f0));
        }
        fr = phi(h)?;
        fl = phi(-h)?;
    }
    let (mut a, mut b);
    if fr < f0 {
        let (mut lo, mut mid, mut fmid) = (0.0, h, fr);
        loop {
            let next = 2.0 * mid + h;
            let fnext = phi(next)?;
            if fnext >= fmid {
                (a, b) = (lo, next);
                break;
            }
            if next > 1e12 {
                return Err(Error::Unbounded);
            }
            (lo, mid, fmid) = (mid, next, fnext);
        }
    } else if fl < f0 {
        let (mut hi, mut mid, mut fmid) = (0.0, -h, fl);
        loop {
            let next = 2.0 * mid - h;
            let fnext = phi(next)?;
            if fnext >= fmid {
                (a, b) = (next, hi);
                break;
            }
            if next < -1e12 {
                return Err(Error::Unbounded);
            }
            (hi, mid, fmid) = (mid, next, fnext);
        }
    } else {
        (a, b) = (-h, h);
    }
    let mut c = b - GOLDEN * (b - a);
    let mut e = a + GOLDEN * (b - a);
    let (mut fc, mut fe) = (phi(c)?, phi(e)?);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + c.abs()) {
            break;
        }
        if fc < fe {
            (b, e, fe) = (e, c, fc);
            c = b - GOLDEN * (b - a);
            fc = phi(c)?;
        } else {
            (a, c, fc) = (c, e, fe);
            e = a + GOLDEN * (b - a);
            fe = phi(e)?;
        }
    }
    Ok(if fc < fe { (c, fc) } else { (e, fe) })
}
