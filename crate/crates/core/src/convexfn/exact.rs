//! Exact-arithmetic integrands (max-affine with inequality domain, and
//! unconstrained quadratics), generic over [`Scalar`]. With `BigRational`
//! every identity of the conditional-expectation calculus holds exactly.

use alloc::vec::Vec;

use crate::num::Scalar;

/// Extended value: finite or `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub enum Ext<S> {
    Finite(S),
    PosInf,
}

impl<S: Scalar> Ext<S> {
    pub fn add(self, other: Ext<S>) -> Ext<S> {
        match (self, other) {
            (Ext::Finite(a), Ext::Finite(b)) => Ext::Finite(a + b),
            _ => Ext::PosInf,
        }
    }

    /// `α·v` with `0·(+inf) = +inf` (the domain indicator survives).
    pub fn scale(self, alpha: &S) -> Ext<S> {
        match self {
            Ext::Finite(a) => Ext::Finite(alpha.clone() * a),
            Ext::PosInf => Ext::PosInf,
        }
    }

    pub fn le(&self, other: &Ext<S>) -> bool {
        match (self, other) {
            (_, Ext::PosInf) => true,
            (Ext::PosInf, Ext::Finite(_)) => false,
            (Ext::Finite(a), Ext::Finite(b)) => a <= b,
        }
    }

    pub fn near(&self, other: &Ext<S>, tol: f64) -> bool {
        match (self, other) {
            (Ext::PosInf, Ext::PosInf) => true,
            (Ext::Finite(a), Ext::Finite(b)) => a.near(b, tol),
            _ => false,
        }
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

/// `max_k (g_k·x + c_k)` on `{x : a_r·x <= b_r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPoly<S> {
    pub pieces: Vec<(Vec<S>, S)>,
    pub rows: Vec<(Vec<S>, S)>,
}

impl<S: Scalar> ExactPoly<S> {
    pub fn eval(&self, x: &[S]) -> Ext<S> {
        if self.rows.iter().any(|(a, b)| dot(a, x) > *b) {
            return Ext::PosInf;
        }
        let mut best: Option<S> = None;
        for (g, c) in &self.pieces {
            let v = dot(g, x) + c.clone();
            best = Some(match best {
                Some(b) if b >= v => b,
                _ => v,
            });
        }
        Ext::Finite(best.expect("at least one piece"))
    }

    pub fn add(&self, other: &ExactPoly<S>) -> ExactPoly<S> {
        let mut pieces = Vec::new();
        for (g, c) in &self.pieces {
            for (h, d) in &other.pieces {
                pieces.push((g.iter().zip(h).map(|(a, b)| a.clone() + b.clone()).collect(), c.clone() + d.clone()));
            }
        }
        let rows = self.rows.iter().chain(&other.rows).cloned().collect();
        ExactPoly { pieces, rows }
    }

    pub fn scale(&self, alpha: &S) -> ExactPoly<S> {
        ExactPoly {
            pieces: self
                .pieces
                .iter()
                .map(|(g, c)| (g.iter().map(|x| alpha.clone() * x.clone()).collect(), alpha.clone() * c.clone()))
                .collect(),
            rows: self.rows.clone(),
        }
    }

    pub fn recession(&self) -> ExactPoly<S> {
        ExactPoly {
            pieces: self.pieces.iter().map(|(g, _)| (g.clone(), S::zero())).collect(),
            rows: self.rows.iter().map(|(a, _)| (a.clone(), S::zero())).collect(),
        }
    }

    /// `Σ π_i f_i`.
    pub fn cond_expect(children: &[(S, &ExactPoly<S>)]) -> ExactPoly<S> {
        let mut acc = children[0].1.scale(&children[0].0);
        for (p, f) in &children[1..] {
            acc = acc.add(&f.scale(p));
        }
        acc
    }
}

/// `½ x'Qx + q·x + c` without constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactQuad<S> {
    pub q: Vec<Vec<S>>,
    pub lin: Vec<S>,
    pub c: S,
}

impl<S: Scalar> ExactQuad<S> {
    pub fn eval(&self, x: &[S]) -> S {
        let qx: Vec<S> = self.q.iter().map(|row| dot(row, x)).collect();
        let two = S::one() + S::one();
        dot(x, &qx) / two + dot(&self.lin, x) + self.c.clone()
    }

    pub fn add(&self, other: &ExactQuad<S>) -> ExactQuad<S> {
        ExactQuad {
            q: self
                .q
                .iter()
                .zip(&other.q)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.clone() + y.clone()).collect())
                .collect(),
            lin: self.lin.iter().zip(&other.lin).map(|(x, y)| x.clone() + y.clone()).collect(),
            c: self.c.clone() + other.c.clone(),
        }
    }

    pub fn scale(&self, alpha: &S) -> ExactQuad<S> {
        ExactQuad {
            q: self.q.iter().map(|r| r.iter().map(|x| alpha.clone() * x.clone()).collect()).collect(),
            lin: self.lin.iter().map(|x| alpha.clone() * x.clone()).collect(),
            c: alpha.clone() * self.c.clone(),
        }
    }

    /// `f^inf(d) = q·d` if `Qd = 0`, else `+inf`.
    pub fn recession_eval(&self, d: &[S]) -> Ext<S> {
        if self.q.iter().any(|row| dot(row, d) != S::zero()) {
            return Ext::PosInf;
        }
        Ext::Finite(dot(&self.lin, d))
    }

    pub fn cond_expect(children: &[(S, &ExactQuad<S>)]) -> ExactQuad<S> {
        let mut acc = children[0].1.scale(&children[0].0);
        for (p, f) in &children[1..] {
            acc = acc.add(&f.scale(p));
        }
        acc
    }
}
