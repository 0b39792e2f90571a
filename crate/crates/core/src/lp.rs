//! Dense two-phase primal simplex.
//!
//! Pricing is Dantzig's most-negative rule until a run of degenerate pivots is
//! seen, after which the solver switches to Bland's rule for good. The final
//! basic solution is recomputed from the original data with an LU solve.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coef: Vec<f64>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// `minimize objective·x` subject to the constraints; `nonneg[j]` marks `x_j >= 0`,
/// other variables are free.
#[derive(Debug, Clone)]
pub struct Lp {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub nonneg: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

const PIVOT_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 200_000;
const DEGENERATE_STREAK: usize = 50;

impl Lp {
    pub fn new(nvars: usize) -> Self {
        Lp { objective: vec![0.0; nvars], constraints: Vec::new(), nonneg: vec![false; nvars] }
    }

    pub fn nvars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, coef: Vec<f64>, cmp: Cmp, rhs: f64) {
        debug_assert_eq!(coef.len(), self.nvars());
        self.constraints.push(Constraint { coef, cmp, rhs });
    }

    pub fn le(&mut self, coef: Vec<f64>, rhs: f64) {
        self.push(coef, Cmp::Le, rhs)
    }

    pub fn eq(&mut self, coef: Vec<f64>, rhs: f64) {
        self.push(coef, Cmp::Eq, rhs)
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Simplex::build(self).run(self)
    }
}

struct Simplex {
    /// rows x (cols + 1); last column is the rhs
    tab: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
    /// first artificial column
    art_start: usize,
    /// standard-form column -> (original variable, sign)
    col_map: Vec<Option<(usize, f64)>>,
    /// standard-form data kept for the final refinement
    a_std: Vec<Vec<f64>>,
    b_std: Vec<f64>,
}

impl Simplex {
    fn build(lp: &Lp) -> Simplex {
        let n = lp.nvars();
        let mut col_map = Vec::new();
        for j in 0..n {
            col_map.push(Some((j, 1.0)));
            if !lp.nonneg[j] {
                col_map.push(Some((j, -1.0)));
            }
        }
        let nstruct = col_map.len();
        let nslack = lp.constraints.iter().filter(|c| c.cmp != Cmp::Eq).count();
        let m = lp.constraints.len();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        let mut slack_of_row = vec![None; m];
        let mut s = nstruct;
        for (i, c) in lp.constraints.iter().enumerate() {
            let mut row = vec![0.0; nstruct + nslack];
            for (k, entry) in col_map.iter().enumerate() {
                let (j, sign) = entry.unwrap();
                row[k] = sign * c.coef[j];
            }
            match c.cmp {
                Cmp::Le => {
                    row[s] = 1.0;
                    slack_of_row[i] = Some(s);
                    s += 1;
                }
                Cmp::Ge => {
                    row[s] = -1.0;
                    slack_of_row[i] = Some(s);
                    s += 1;
                }
                Cmp::Eq => {}
            }
            let mut b = c.rhs;
            if b < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
                b = -b;
            }
            rows.push(row);
            rhs.push(b);
        }
        for _ in 0..nslack {
            col_map.push(None);
        }
        let art_start = nstruct + nslack;
        // rows whose slack is +1 after sign normalization start basic on the slack
        let mut basis = vec![usize::MAX; m];
        let mut nart = 0;
        for i in 0..m {
            if let Some(sc) = slack_of_row[i] {
                if rows[i][sc] > 0.0 {
                    basis[i] = sc;
                    continue;
                }
            }
            nart += 1;
        }
        let ncols = art_start + nart;
        let mut tab = Vec::with_capacity(m);
        let mut a = art_start;
        for i in 0..m {
            let mut row = rows[i].clone();
            row.resize(ncols, 0.0);
            if basis[i] == usize::MAX {
                row[a] = 1.0;
                basis[i] = a;
                a += 1;
            }
            row.push(rhs[i]);
            tab.push(row);
        }
        Simplex { tab, basis, ncols, art_start, col_map, a_std: rows, b_std: rhs }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.ncols + 1;
        let p = self.tab[r][c];
        for k in 0..width {
            self.tab[r][k] /= p;
        }
        let prow = self.tab[r].clone();
        for i in 0..self.tab.len() {
            if i == r {
                continue;
            }
            let f = self.tab[i][c];
            if f != 0.0 {
                let row = &mut self.tab[i];
                for k in 0..width {
                    row[k] -= f * prow[k];
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimize `cost·x` over the current tableau; `allowed` masks entering columns.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<bool> {
        let m = self.tab.len();
        let mut bland = false;
        let mut streak = 0;
        let mut basic = vec![false; self.ncols];
        for _ in 0..MAX_PIVOTS {
            basic.iter_mut().for_each(|b| *b = false);
            for &b in &self.basis {
                basic[b] = true;
            }
            // reduced costs
            let mut entering = None;
            let mut best = -1e-9;
            for j in 0..allowed {
                if basic[j] {
                    continue;
                }
                let mut rc = cost[j];
                for i in 0..m {
                    let a = self.tab[i][j];
                    if a != 0.0 {
                        rc -= cost[self.basis[i]] * a;
                    }
                }
                if rc < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = entering else { return Ok(true) };
            // ratio test
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.tab[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.tab[i][self.ncols].max(0.0) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, ratio)) = leave else { return Ok(false) };
            if ratio <= 1e-12 {
                streak += 1;
                if streak > DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                streak = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::IterationLimit)
    }

    fn run(mut self, lp: &Lp) -> Result<LpOutcome> {
        let m = self.tab.len();
        // phase 1
        if self.art_start < self.ncols {
            let mut cost = vec![0.0; self.ncols];
            for c in cost.iter_mut().skip(self.art_start) {
                *c = 1.0;
            }
            self.optimize(&cost, self.ncols)?;
            let infeas: f64 = (0..m)
                .filter(|&i| self.basis[i] >= self.art_start)
                .map(|i| self.tab[i][self.ncols])
                .sum();
            let scale = 1.0 + self.b_std.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if infeas > 1e-9 * scale {
                return Ok(LpOutcome::Infeasible);
            }
            // drive remaining artificials out of the basis
            let mut drop_rows = Vec::new();
            for i in 0..m {
                if self.basis[i] >= self.art_start {
                    let col = (0..self.art_start)
                        .filter(|j| !self.basis.contains(j))
                        .max_by(|&a, &b| {
                            self.tab[i][a].abs().partial_cmp(&self.tab[i][b].abs()).unwrap()
                        });
                    match col {
                        Some(j) if self.tab[i][j].abs() > 1e-9 => self.pivot(i, j),
                        _ => drop_rows.push(i),
                    }
                }
            }
            for &i in drop_rows.iter().rev() {
                self.tab.remove(i);
                self.basis.remove(i);
                self.a_std.remove(i);
                self.b_std.remove(i);
            }
        }
        // phase 2
        let mut cost = vec![0.0; self.ncols];
        for (k, entry) in self.col_map.iter().enumerate() {
            if let Some((j, sign)) = entry {
                cost[k] = sign * lp.objective[*j];
            }
        }
        if !self.optimize(&cost, self.art_start)? {
            return Ok(LpOutcome::Unbounded);
        }
        let xs = self.refined_basic_solution();
        let mut x = vec![0.0; lp.nvars()];
        for (k, entry) in self.col_map.iter().enumerate() {
            if let Some((j, sign)) = entry {
                x[*j] += sign * xs[k];
            }
        }
        let value = crate::num::dot(&lp.objective, &x);
        Ok(LpOutcome::Optimal { x, value })
    }

    /// Basic solution recomputed from the original standard-form data.
    fn refined_basic_solution(&self) -> Vec<f64> {
        let m = self.basis.len();
        let mut xs = vec![0.0; self.ncols];
        for i in 0..m {
            xs[self.basis[i]] = self.tab[i][self.ncols];
        }
        if m == 0 {
            return xs;
        }
        let bmat = DMatrix::from_fn(m, m, |i, k| {
            let col = self.basis[k];
            if col < self.art_start {
                self.a_std[i][col]
            } else {
                0.0
            }
        });
        let rhs = DVector::from_column_slice(&self.b_std);
        if let Some(sol) = bmat.lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                let drift = sol
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (v - xs[self.basis[k]]).abs())
                    .fold(0.0, f64::max);
                if drift < 1e-6 {
                    for k in 0..m {
                        xs[self.basis[k]] = sol[k].max(0.0);
                    }
                }
            }
        }
        xs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_x_subject_to_lower_bound() {
        let mut lp = Lp::new(1);
        lp.objective = vec![1.0];
        lp.push(vec![1.0], Cmp::Ge, 2.0);
        match lp.solve().unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert!((x[0] - 2.0).abs() < 1e-12);
                assert!((value - 2.0).abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn detects_unbounded_and_infeasible() {
        let mut lp = Lp::new(1);
        lp.objective = vec![-1.0];
        lp.push(vec![1.0], Cmp::Ge, 0.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);

        let mut lp = Lp::new(1);
        lp.push(vec![1.0], Cmp::Ge, 2.0);
        lp.push(vec![1.0], Cmp::Le, 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn matches_hand_dual() {
        // max 3a + 2b s.t. a + b <= 4, a + 3b <= 6, a,b >= 0 ; dual optimum y = (3, 0) -> 12
        let mut lp = Lp::new(2);
        lp.objective = vec![-3.0, -2.0];
        lp.nonneg = vec![true, true];
        lp.le(vec![1.0, 1.0], 4.0);
        lp.le(vec![1.0, 3.0], 6.0);
        let v = lp.solve().unwrap().value().unwrap();
        assert!((v + 12.0).abs() < 1e-9);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = Lp::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.eq(vec![1.0, -1.0], 0.0);
        lp.eq(vec![2.0, -2.0], 0.0);
        lp.push(vec![1.0, 0.0], Cmp::Ge, 1.0);
        let v = lp.solve().unwrap().value().unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }
}
