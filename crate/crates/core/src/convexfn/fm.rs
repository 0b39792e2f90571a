//! Linear inequality systems `coef·x <= rhs` and Fourier-Motzkin projection.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lp::{Lp, LpOutcome};

pub const DEFAULT_ROW_CAP: usize = 10_000;
/// Above this many rows, LP-based redundancy removal is skipped.
pub const LP_PRUNE_LIMIT: usize = 4_000;
const ZERO_TOL: f64 = 1e-12;
const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub coef: Vec<f64>,
    pub rhs: f64,
}

impl Halfspace {
    pub fn new(coef: Vec<f64>, rhs: f64) -> Self {
        Halfspace { coef, rhs }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        self.rhs - crate::num::dot(&self.coef, x)
    }

    /// Scale so the largest coefficient has magnitude one; `None` for a zero row.
    fn normalized(&self) -> Option<Halfspace> {
        let m = crate::num::norm_inf(&self.coef);
        if m <= ZERO_TOL * (1.0 + self.rhs.abs()).min(1e6) {
            return None;
        }
        Some(Halfspace { coef: self.coef.iter().map(|c| c / m).collect(), rhs: self.rhs / m })
    }
}

/// Polyhedron `{x in R^dim : rows}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequalities {
    pub dim: usize,
    pub rows: Vec<Halfspace>,
}

impl Inequalities {
    pub fn new(dim: usize) -> Self {
        Inequalities { dim, rows: Vec::new() }
    }

    pub fn with_rows(dim: usize, rows: Vec<Halfspace>) -> Self {
        Inequalities { dim, rows }
    }

    /// Canonical empty polyhedron: the single row `0 <= -1`.
    pub fn empty(dim: usize) -> Self {
        Inequalities { dim, rows: vec![Halfspace::new(vec![0.0; dim], -1.0)] }
    }

    pub fn push(&mut self, coef: Vec<f64>, rhs: f64) {
        debug_assert_eq!(coef.len(), self.dim);
        self.rows.push(Halfspace::new(coef, rhs));
    }

    pub fn is_trivially_empty(&self) -> bool {
        self.rows.iter().any(|r| r.coef.iter().all(|c| *c == 0.0) && r.rhs < 0.0)
    }

    /// Membership with relative slack tolerance.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let xs = crate::num::norm_inf(x);
        self.rows.iter().all(|r| {
            let scale = 1.0 + r.rhs.abs() + crate::num::norm_inf(&r.coef) * xs;
            r.slack(x) >= -tol * scale
        })
    }

    /// A point of the polyhedron, if any.
    pub fn feasible_point(&self) -> Result<Option<Vec<f64>>> {
        if self.is_trivially_empty() {
            return Ok(None);
        }
        if self.rows.is_empty() {
            return Ok(Some(vec![0.0; self.dim]));
        }
        let mut lp = Lp::new(self.dim);
        for r in &self.rows {
            lp.le(r.coef.clone(), r.rhs);
        }
        Ok(match lp.solve()? {
            LpOutcome::Optimal { x, .. } => Some(x),
            LpOutcome::Infeasible => None,
            LpOutcome::Unbounded => Some(vec![0.0; self.dim]),
        })
    }

    pub fn is_feasible(&self) -> Result<bool> {
        Ok(self.feasible_point()?.is_some())
    }

    /// Drop zero rows, duplicates and dominated parallel rows; optionally
    /// remove remaining redundant rows with one LP per row.
    pub fn prune(&mut self, with_lp: bool) -> Result<()> {
        let mut rows: Vec<Halfspace> = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            match r.normalized() {
                None => {
                    if r.rhs < -SLACK_TOL {
                        *self = Inequalities::empty(self.dim);
                        return Ok(());
                    }
                }
                Some(n) => rows.push(n),
            }
        }
        rows.sort_by(|a, b| lex(&a.coef, &b.coef).then(a.rhs.partial_cmp(&b.rhs).unwrap()));
        let mut dedup: Vec<Halfspace> = Vec::with_capacity(rows.len());
        for r in rows {
            match dedup.last() {
                Some(prev) if same(&prev.coef, &r.coef) => {}
                _ => dedup.push(r),
            }
        }
        self.rows = dedup;
        if with_lp && self.rows.len() > 1 && self.rows.len() <= LP_PRUNE_LIMIT {
            self.prune_lp()?;
        }
        Ok(())
    }

    fn prune_lp(&mut self) -> Result<()> {
        let mut keep = vec![true; self.rows.len()];
        for i in (0..self.rows.len()).rev() {
            let mut lp = Lp::new(self.dim);
            lp.objective = self.rows[i].coef.iter().map(|c| -c).collect();
            for (j, r) in self.rows.iter().enumerate() {
                if j != i && keep[j] {
                    lp.le(r.coef.clone(), r.rhs);
                }
            }
            lp.le(self.rows[i].coef.clone(), self.rows[i].rhs + 1.0);
            match lp.solve()? {
                LpOutcome::Optimal { value, .. } => {
                    if -value <= self.rows[i].rhs + SLACK_TOL * (1.0 + self.rows[i].rhs.abs()) {
                        keep[i] = false;
                    }
                }
                LpOutcome::Infeasible => {
                    *self = Inequalities::empty(self.dim);
                    return Ok(());
                }
                LpOutcome::Unbounded => {}
            }
        }
        let rows = core::mem::take(&mut self.rows);
        self.rows = rows.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect();
        Ok(())
    }

    /// Drop coordinate `k` (its coefficients must already be zero).
    fn drop_coordinate(&mut self, k: usize) {
        for r in &mut self.rows {
            r.coef.remove(k);
        }
        self.dim -= 1;
    }
}

fn lex(a: &[f64], b: &[f64]) -> core::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-10 {
            return x.partial_cmp(y).unwrap();
        }
    }
    core::cmp::Ordering::Equal
}

fn same(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10)
}

/// Eliminate one coordinate by Fourier-Motzkin.
fn eliminate_one(sys: &Inequalities, k: usize, cap: usize) -> Result<Inequalities> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut out = Inequalities::new(sys.dim);
    for r in &sys.rows {
        let a = r.coef[k];
        if a > ZERO_TOL {
            pos.push(r);
        } else if a < -ZERO_TOL {
            neg.push(r);
        } else {
            let mut r = r.clone();
            r.coef[k] = 0.0;
            out.rows.push(r);
        }
    }
    let total = out.rows.len() + pos.len() * neg.len();
    if total > cap {
        return Err(Error::RowBlowup { rows: total, cap });
    }
    for p in &pos {
        for n in &neg {
            let (wp, wn) = (1.0 / p.coef[k], -1.0 / n.coef[k]);
            let mut coef: Vec<f64> = p.coef.iter().zip(&n.coef).map(|(a, b)| wp * a + wn * b).collect();
            coef[k] = 0.0;
            out.rows.push(Halfspace::new(coef, wp * p.rhs + wn * n.rhs));
        }
    }
    Ok(out)
}

/// Project `sys` onto its first `dim - eliminate` coordinates.
pub fn fm_project(sys: &Inequalities, eliminate: usize, cap: usize) -> Result<Inequalities> {
    fm_project_with(sys, eliminate, cap, true)
}

pub fn fm_project_with(sys: &Inequalities, eliminate: usize, cap: usize, lp_prune: bool) -> Result<Inequalities> {
    let keep = sys.dim - eliminate;
    let mut cur = sys.clone();
    cur.prune(false)?;
    let mut remaining: Vec<usize> = (keep..sys.dim).collect();
    while !remaining.is_empty() {
        if cur.is_trivially_empty() {
            return Ok(Inequalities::empty(keep));
        }
        // cheapest variable first
        let (idx, _) = remaining
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let p = cur.rows.iter().filter(|r| r.coef[k] > ZERO_TOL).count();
                let n = cur.rows.iter().filter(|r| r.coef[k] < -ZERO_TOL).count();
                (i, p * n)
            })
            .min_by_key(|&(_, c)| c)
            .unwrap();
        let k = remaining.remove(idx);
        cur = eliminate_one(&cur, k, cap)?;
        cur.prune(lp_prune)?;
    }
    for k in (keep..sys.dim).rev() {
        cur.drop_coordinate(k);
    }
    Ok(cur)
}
