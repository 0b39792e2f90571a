//! Max-affine functions on a polyhedral domain.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::fm::{fm_project, Halfspace, Inequalities, DEFAULT_ROW_CAP};
use crate::error::{Error, Result};
use crate::lp::{Cmp, Lp, LpOutcome};
use crate::num::{dot, norm_inf};

const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub grad: Vec<f64>,
    pub offset: f64,
}

impl Piece {
    pub fn new(grad: Vec<f64>, offset: f64) -> Self {
        Piece { grad, offset }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.grad, x) + self.offset
    }
}

/// `max_k (grad_k·x + offset_k)` on `domain`, `+inf` outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedral {
    pub dim: usize,
    pub pieces: Vec<Piece>,
    pub domain: Inequalities,
}

/// Output of [`Polyhedral::partial_min`].
#[derive(Debug, Clone)]
pub struct PolyMin {
    pub value: Polyhedral,
    pub lineality: DMatrix<f64>,
    /// whether `{d : f^inf(0, d) <= 0}` is a linear space
    pub linear: bool,
}

impl Polyhedral {
    pub fn new(dim: usize, pieces: Vec<Piece>, domain: Vec<Halfspace>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidFunction("polyhedral function needs at least one piece".into()));
        }
        for p in &pieces {
            if p.grad.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.grad.len() });
            }
            if !p.offset.is_finite() || p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::InvalidFunction("non-finite piece".into()));
            }
        }
        for r in &domain {
            if r.coef.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.coef.len() });
            }
        }
        Ok(Polyhedral { dim, pieces, domain: Inequalities::with_rows(dim, domain) })
    }

    pub fn linear(grad: Vec<f64>, offset: f64) -> Self {
        let dim = grad.len();
        Polyhedral { dim, pieces: vec![Piece::new(grad, offset)], domain: Inequalities::new(dim) }
    }

    /// Indicator of a polyhedron.
    pub fn indicator(domain: Inequalities) -> Self {
        Polyhedral { dim: domain.dim, pieces: vec![Piece::new(vec![0.0; domain.dim], 0.0)], domain }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if !self.domain.contains(x, 1e-9) {
            return f64::INFINITY;
        }
        self.pieces.iter().map(|p| p.eval(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sum; the result is simplified (redundant pieces and rows removed).
    pub fn add(&self, other: &Polyhedral) -> Result<Polyhedral> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let mut pieces = Vec::with_capacity(self.pieces.len() * other.pieces.len());
        for a in &self.pieces {
            for b in &other.pieces {
                pieces.push(Piece::new(
                    a.grad.iter().zip(&b.grad).map(|(x, y)| x + y).collect(),
                    a.offset + b.offset,
                ));
            }
        }
        let mut rows = self.domain.rows.clone();
        rows.extend(other.domain.rows.iter().cloned());
        let mut out = Polyhedral { dim: self.dim, pieces, domain: Inequalities::with_rows(self.dim, rows) };
        out.simplify()?;
        Ok(out)
    }

    pub fn add_constant(&self, c: f64) -> Polyhedral {
        let mut out = self.clone();
        out.pieces.iter_mut().for_each(|p| p.offset += c);
        out
    }

    pub fn tilt(&self, v: &[f64]) -> Polyhedral {
        let mut out = self.clone();
        for p in &mut out.pieces {
            p.grad.iter_mut().zip(v).for_each(|(g, vi)| *g += vi);
        }
        out
    }

    pub fn scale(&self, alpha: f64) -> Polyhedral {
        if alpha == 0.0 {
            return Polyhedral::indicator(self.domain.clone());
        }
        let mut out = self.clone();
        for p in &mut out.pieces {
            p.grad.iter_mut().for_each(|g| *g *= alpha);
            p.offset *= alpha;
        }
        out
    }

    /// `z -> f(M z + w)` with `M` of shape `dim x k`.
    pub fn compose_affine(&self, m: &DMatrix<f64>, w: &DVector<f64>) -> Polyhedral {
        let k = m.ncols();
        let pull = |g: &[f64]| -> Vec<f64> { (0..k).map(|j| (0..self.dim).map(|i| g[i] * m[(i, j)]).sum()).collect() };
        let wv: Vec<f64> = w.iter().copied().collect();
        let pieces = self.pieces.iter().map(|p| Piece::new(pull(&p.grad), p.offset + dot(&p.grad, &wv))).collect();
        let rows = self.domain.rows.iter().map(|r| Halfspace::new(pull(&r.coef), r.rhs - dot(&r.coef, &wv))).collect();
        Polyhedral { dim: k, pieces, domain: Inequalities::with_rows(k, rows) }
    }

    /// Pad with `extra` trailing free coordinates.
    pub fn extend(&self, extra: usize) -> Polyhedral {
        let pad = |v: &[f64]| {
            let mut v = v.to_vec();
            v.resize(v.len() + extra, 0.0);
            v
        };
        Polyhedral {
            dim: self.dim + extra,
            pieces: self.pieces.iter().map(|p| Piece::new(pad(&p.grad), p.offset)).collect(),
            domain: Inequalities::with_rows(
                self.dim + extra,
                self.domain.rows.iter().map(|r| Halfspace::new(pad(&r.coef), r.rhs)).collect(),
            ),
        }
    }

    /// Linear parts of the pieces on the recession cone of the domain.
    pub fn recession(&self) -> Polyhedral {
        if self.domain.is_trivially_empty() {
            return self.clone();
        }
        let mut pieces: Vec<Piece> = Vec::new();
        for p in &self.pieces {
            if !pieces.iter().any(|q| q.grad == p.grad) {
                pieces.push(Piece::new(p.grad.clone(), 0.0));
            }
        }
        let rows = self.domain.rows.iter().map(|r| Halfspace::new(r.coef.clone(), 0.0)).collect();
        Polyhedral { dim: self.dim, pieces, domain: Inequalities::with_rows(self.dim, rows) }
    }

    /// Rows `R` and functional `ℓ` with `f^inf(d) = ℓ·d` exactly on `ker R`.
    pub fn linearity(&self) -> (DMatrix<f64>, DVector<f64>) {
        let base = &self.pieces[0].grad;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for p in &self.pieces[1..] {
            rows.push(p.grad.iter().zip(base).map(|(a, b)| a - b).collect());
        }
        for r in &self.domain.rows {
            rows.push(r.coef.clone());
        }
        (crate::linalg::from_rows(&rows, self.dim), DVector::from_column_slice(base))
    }

    /// Epigraph `{(x, t) : f(x) <= t}` as an inequality system over `dim + 1`.
    pub fn epigraph(&self) -> Inequalities {
        let mut sys = Inequalities::new(self.dim + 1);
        for p in &self.pieces {
            let mut c = p.grad.clone();
            c.push(-1.0);
            sys.push(c, -p.offset);
        }
        for r in &self.domain.rows {
            let mut c = r.coef.clone();
            c.push(0.0);
            sys.push(c, r.rhs);
        }
        sys
    }

    /// Inverse of [`Self::epigraph`]; the last coordinate is the epigraph variable.
    pub fn from_epigraph(sys: &Inequalities) -> Result<Polyhedral> {
        let dim = sys.dim - 1;
        if sys.is_trivially_empty() {
            return Err(Error::Infeasible { node: None });
        }
        let mut pieces = Vec::new();
        let mut domain = Inequalities::new(dim);
        for r in &sys.rows {
            let tau = r.coef[dim];
            let scale = norm_inf(&r.coef[..dim]).max(1.0);
            if tau < -1e-12 * scale {
                let w = -1.0 / tau;
                pieces.push(Piece::new(r.coef[..dim].iter().map(|c| c * w).collect(), -r.rhs * w));
            } else if tau <= 1e-12 * scale {
                domain.push(r.coef[..dim].to_vec(), r.rhs);
            } else {
                return Err(Error::InvalidFunction("epigraph row bounds t from above".into()));
            }
        }
        if pieces.is_empty() {
            return Err(Error::UnboundedBelow { node: None });
        }
        Ok(Polyhedral { dim, pieces, domain })
    }

    /// Remove redundant domain rows and pieces that are never the strict maximum.
    pub fn simplify(&mut self) -> Result<()> {
        self.domain.prune(true)?;
        if self.domain.is_trivially_empty() {
            self.pieces = vec![Piece::new(vec![0.0; self.dim], 0.0)];
            return Ok(());
        }
        // equal gradients: keep the largest offset
        let mut pieces: Vec<Piece> = Vec::with_capacity(self.pieces.len());
        for p in self.pieces.drain(..) {
            match pieces.iter_mut().find(|q| q.grad.iter().zip(&p.grad).all(|(a, b)| (a - b).abs() <= 1e-12)) {
                Some(q) => q.offset = q.offset.max(p.offset),
                None => pieces.push(p),
            }
        }
        self.pieces = pieces;
        if self.pieces.len() <= 1 || self.pieces.len() + self.domain.rows.len() > super::fm::LP_PRUNE_LIMIT {
            return Ok(());
        }
        let n = self.dim;
        let scale = 1.0 + self.pieces.iter().fold(0.0f64, |m, p| m.max(p.offset.abs()));
        let mut keep = vec![true; self.pieces.len()];
        for k in (0..self.pieces.len()).rev() {
            // max s  s.t. piece_j(x) + s <= piece_k(x) for kept j != k, x in domain, s <= 1
            let mut lp = Lp::new(n + 1);
            lp.objective[n] = -1.0;
            let pk = &self.pieces[k];
            for (j, pj) in self.pieces.iter().enumerate() {
                if j == k || !keep[j] {
                    continue;
                }
                let mut c: Vec<f64> = pj.grad.iter().zip(&pk.grad).map(|(a, b)| a - b).collect();
                c.push(1.0);
                lp.le(c, pk.offset - pj.offset);
            }
            for r in &self.domain.rows {
                let mut c = r.coef.clone();
                c.push(0.0);
                lp.le(c, r.rhs);
            }
            let mut cap = vec![0.0; n + 1];
            cap[n] = 1.0;
            lp.le(cap, 1.0);
            match lp.solve()? {
                LpOutcome::Optimal { value, .. } => {
                    if -value <= TIE_TOL * scale {
                        keep[k] = false;
                    }
                }
                LpOutcome::Infeasible => {
                    self.domain = Inequalities::empty(n);
                    self.pieces = vec![Piece::new(vec![0.0; n], 0.0)];
                    return Ok(());
                }
                LpOutcome::Unbounded => {}
            }
        }
        let pieces = core::mem::take(&mut self.pieces);
        self.pieces = pieces.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
        Ok(())
    }

    /// Minimize over the last `d2` coordinates.
    pub fn partial_min(&self, d2: usize, strict: bool) -> Result<PolyMin> {
        if d2 > self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: d2 });
        }
        let d1 = self.dim - d2;
        if !self.domain.is_feasible()? {
            return Err(Error::Infeasible { node: None });
        }
        if d2 == 0 {
            return Ok(PolyMin { value: self.clone(), lineality: DMatrix::zeros(0, 0), linear: true });
        }
        let (lineality, linear) = self.block_recession(d1)?;
        if strict && !linear {
            return Err(Error::NonLinearRecession { node: None });
        }
        // epigraph over (x, t, u), eliminate u
        let mut sys = Inequalities::new(self.dim + 1);
        let reorder = |c: &[f64], t: f64| {
            let mut v = c[..d1].to_vec();
            v.push(t);
            v.extend_from_slice(&c[d1..]);
            v
        };
        for p in &self.pieces {
            sys.push(reorder(&p.grad, -1.0), -p.offset);
        }
        for r in &self.domain.rows {
            sys.push(reorder(&r.coef, 0.0), r.rhs);
        }
        let projected = fm_project(&sys, d2, DEFAULT_ROW_CAP)?;
        let mut value = Polyhedral::from_epigraph(&projected)?;
        value.simplify()?;
        Ok(PolyMin { value, lineality, linear })
    }

    /// Recession analysis of `d -> f^inf(0, d)` on the trailing block:
    /// unboundedness check, lineality basis and linearity verdict.
    fn block_recession(&self, d1: usize) -> Result<(DMatrix<f64>, bool)> {
        let d2 = self.dim - d1;
        let grads: Vec<Vec<f64>> = self.pieces.iter().map(|p| p.grad[d1..].to_vec()).collect();
        let rows: Vec<Vec<f64>> = self.domain.rows.iter().map(|r| r.coef[d1..].to_vec()).collect();
        let scale = grads.iter().chain(&rows).fold(1.0f64, |m, g| m.max(norm_inf(g)));
        let boxed = |lp: &mut Lp, nv: usize| {
            for i in 0..d2 {
                let mut c = vec![0.0; nv];
                c[i] = 1.0;
                lp.le(c.clone(), 1.0);
                c[i] = -1.0;
                lp.le(c, 1.0);
            }
        };
        // min over the box of max_k grad_k·d subject to domain recession
        let mut lp = Lp::new(d2 + 1);
        lp.objective[d2] = 1.0;
        for g in &grads {
            let mut c = g.clone();
            c.push(-1.0);
            lp.le(c, 0.0);
        }
        for r in &rows {
            let mut c = r.clone();
            c.push(0.0);
            lp.le(c, 0.0);
        }
        boxed(&mut lp, d2 + 1);
        match lp.solve()? {
            LpOutcome::Optimal { value, .. } if value < -1e-9 * scale => {
                return Err(Error::UnboundedBelow { node: None })
            }
            LpOutcome::Optimal { .. } => {}
            _ => return Err(Error::InvalidFunction("recession LP failed".into())),
        }
        // zero-cost cone {grad·d <= 0, row·d <= 0}: linear iff no row is strictly negative on it
        let mut lp = Lp::new(d2);
        for g in grads.iter().chain(&rows) {
            lp.le(g.clone(), 0.0);
            for (o, gi) in lp.objective.iter_mut().zip(g) {
                *o += gi;
            }
        }
        boxed(&mut lp, d2);
        let linear = match lp.solve()? {
            LpOutcome::Optimal { value, .. } => value >= -1e-9 * scale,
            _ => false,
        };
        let all: Vec<Vec<f64>> = grads.into_iter().chain(rows).collect();
        let lineality = crate::linalg::null_space(&crate::linalg::from_rows(&all, d2));
        Ok((lineality, linear))
    }

    /// Minimizer of `u -> f(x, u)` over the last `d2` coordinates, orthogonal to
    /// `lineality` and of least 1-norm among (near-)minimizers.
    pub fn select(&self, d2: usize, lineality: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
        let d1 = self.dim - d2;
        if d2 == 0 {
            return Ok(Vec::new());
        }
        let fixed = |c: &[f64]| dot(&c[..d1], x);
        // stage 1: optimal value
        let mut lp = Lp::new(d2 + 1);
        lp.objective[d2] = 1.0;
        for p in &self.pieces {
            let mut c = p.grad[d1..].to_vec();
            c.push(-1.0);
            lp.le(c, -p.offset - fixed(&p.grad));
        }
        for r in &self.domain.rows {
            let mut c = r.coef[d1..].to_vec();
            c.push(0.0);
            lp.le(c, r.rhs - fixed(&r.coef));
        }
        for j in 0..lineality.ncols() {
            let mut c: Vec<f64> = lineality.column(j).iter().copied().collect();
            c.push(0.0);
            lp.push(c, Cmp::Eq, 0.0);
        }
        let best = match lp.solve()? {
            LpOutcome::Optimal { value, .. } => value,
            LpOutcome::Infeasible => return Err(Error::Infeasible { node: None }),
            LpOutcome::Unbounded => return Err(Error::UnboundedBelow { node: None }),
        };
        // stage 2: least 1-norm among points within tolerance of the optimum
        let slack = 1e-10 * (1.0 + best.abs());
        let nv = 2 * d2;
        let mut lp = Lp::new(nv);
        for i in 0..d2 {
            lp.objective[d2 + i] = 1.0;
            let mut c = vec![0.0; nv];
            c[i] = 1.0;
            c[d2 + i] = -1.0;
            lp.le(c.clone(), 0.0);
            c[i] = -1.0;
            lp.le(c, 0.0);
        }
        let pad = |g: &[f64]| {
            let mut c = g.to_vec();
            c.resize(nv, 0.0);
            c
        };
        for p in &self.pieces {
            lp.le(pad(&p.grad[d1..]), best + slack - p.offset - fixed(&p.grad));
        }
        for r in &self.domain.rows {
            lp.le(pad(&r.coef[d1..]), r.rhs - fixed(&r.coef));
        }
        for j in 0..lineality.ncols() {
            let c: Vec<f64> = lineality.column(j).iter().copied().collect();
            lp.push(pad(&c), Cmp::Eq, 0.0);
        }
        match lp.solve()? {
            LpOutcome::Optimal { x: sol, .. } => Ok(sol[..d2].to_vec()),
            _ => Err(Error::Infeasible { node: None }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_x_2x1_on_nonpositive() -> Polyhedral {
        Polyhedral::new(
            1,
            vec![Piece::new(vec![1.0], 0.0), Piece::new(vec![2.0], 1.0)],
            vec![Halfspace::new(vec![1.0], 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn eval_with_domain() {
        let f = max_x_2x1_on_nonpositive();
        assert_eq!(f.eval(&[1.0]), f64::INFINITY);
        assert_eq!(f.eval(&[-0.5]), 0.0);
        assert_eq!(f.eval(&[-2.0]), -2.0);
    }

    #[test]
    fn recession_drops_constants() {
        let f = Polyhedral::new(1, vec![Piece::new(vec![1.0], 0.0), Piece::new(vec![2.0], 1.0)], vec![]).unwrap();
        let r = f.recession();
        assert_eq!(r.eval(&[3.0]), 6.0);
        assert_eq!(r.eval(&[-3.0]), -3.0);
        // bounded domain -> origin indicator
        let box01 = Polyhedral::indicator(Inequalities::with_rows(
            1,
            vec![Halfspace::new(vec![1.0], 1.0), Halfspace::new(vec![-1.0], 0.0)],
        ));
        let r = box01.recession();
        assert_eq!(r.eval(&[0.0]), 0.0);
        assert_eq!(r.eval(&[0.1]), f64::INFINITY);
    }

    #[test]
    fn scale_zero_keeps_domain() {
        let f = Polyhedral::new(
            1,
            vec![Piece::new(vec![1.0], 0.0)],
            vec![Halfspace::new(vec![1.0], 1.0), Halfspace::new(vec![-1.0], 0.0)],
        )
        .unwrap();
        let z = f.scale(0.0);
        assert_eq!(z.eval(&[0.5]), 0.0);
        assert_eq!(z.eval(&[2.0]), f64::INFINITY);
    }

    #[test]
    fn abs_value_partial_min() {
        // f(x, u) = |x - u| + |u| over u -> |x|, argmin set between 0 and x, least norm u = 0
        let f = Polyhedral::new(
            2,
            vec![
                Piece::new(vec![1.0, 0.0], 0.0),
                Piece::new(vec![1.0, -2.0], 0.0),
                Piece::new(vec![-1.0, 2.0], 0.0),
                Piece::new(vec![-1.0, 0.0], 0.0),
            ],
            vec![],
        )
        .unwrap();
        let m = f.partial_min(1, true).unwrap();
        for x in [-2.0, -0.3, 0.0, 1.5] {
            assert!((m.value.eval(&[x]) - x.abs()).abs() < 1e-12);
            let u = f.select(1, &m.lineality, &[x]).unwrap();
            assert!(u[0].abs() < 1e-9);
        }
    }

    #[test]
    fn free_coordinate_lineality() {
        // |d1| with d2 free: minimizing over d2 sees a full lineality line
        let f = Polyhedral::new(2, vec![Piece::new(vec![1.0, 0.0], 0.0), Piece::new(vec![-1.0, 0.0], 0.0)], vec![])
            .unwrap();
        let m = f.partial_min(1, true).unwrap();
        assert_eq!(m.lineality.ncols(), 1);
        assert!(m.linear);
    }

    #[test]
    fn one_sided_ray_is_not_linear() {
        // f(x, u) = max(x - u, 0): u -> +inf is a zero-cost ray, u -> -inf is not
        let f = Polyhedral::new(2, vec![Piece::new(vec![1.0, -1.0], 0.0), Piece::new(vec![0.0, 0.0], 0.0)], vec![])
            .unwrap();
        assert!(matches!(f.partial_min(1, true), Err(Error::NonLinearRecession { .. })));
        let m = f.partial_min(1, false).unwrap();
        assert!(!m.linear);
        assert!(m.value.eval(&[5.0]).abs() < 1e-12);
    }

    #[test]
    fn unbounded_linear_direction() {
        let f = Polyhedral::linear(vec![0.0, 1.0], 0.0);
        assert!(matches!(f.partial_min(1, true), Err(Error::UnboundedBelow { .. })));
    }
}
