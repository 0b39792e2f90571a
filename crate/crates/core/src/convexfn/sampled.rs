//! Piecewise-linear convex functions of one variable given by knots.

use alloc::vec;
use alloc::vec::Vec;

use super::fm::{Halfspace, Inequalities};
use super::polyhedral::{Piece, Polyhedral};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled1D {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// continue linearly beyond the end knots instead of `+inf`
    pub extrapolate: bool,
}

impl Sampled1D {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, extrapolate: bool) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::InvalidFunction("knots and values must be nonempty and of equal length".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidFunction("knots must be strictly increasing".into()));
        }
        if values.iter().chain(&knots).any(|v| !v.is_finite()) {
            return Err(Error::InvalidFunction("non-finite knot data".into()));
        }
        let f = Sampled1D { knots, values, extrapolate };
        let s = f.slopes();
        for w in s.windows(2) {
            if w[1] < w[0] - 1e-12 * (1.0 + w[0].abs().max(w[1].abs())) {
                return Err(Error::InvalidFunction("sampled function is not convex".into()));
            }
        }
        Ok(f)
    }

    /// Sample `f` on `knots` (no convexity repair).
    pub fn from_fn(knots: Vec<f64>, f: impl Fn(f64) -> f64, extrapolate: bool) -> Result<Self> {
        let values = knots.iter().map(|&k| f(k)).collect();
        Sampled1D::new(knots, values, extrapolate)
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
            .collect()
    }

    fn end_slopes(&self) -> (f64, f64) {
        let s = self.slopes();
        match (s.first(), s.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => (0.0, 0.0),
        }
    }

    pub fn lo(&self) -> f64 {
        self.knots[0]
    }

    pub fn hi(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let (lo, hi) = (self.lo(), self.hi());
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if x < lo - tol || x > hi + tol {
            if !self.extrapolate {
                return f64::INFINITY;
            }
            let (s0, s1) = self.end_slopes();
            return if x < lo { self.values[0] + s0 * (x - lo) } else { self.values[n - 1] + s1 * (x - hi) };
        }
        if n == 1 {
            return self.values[0];
        }
        let x = x.clamp(lo, hi);
        let i = match self.knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        let (k0, k1) = (self.knots[i - 1], self.knots[i]);
        let w = (x - k0) / (k1 - k0);
        self.values[i - 1] * (1.0 - w) + self.values[i] * w
    }

    /// Right derivative at `x` (within the sampled range).
    pub fn right_slope(&self, x: f64) -> f64 {
        let s = self.slopes();
        if s.is_empty() {
            return 0.0;
        }
        let i = self.knots.partition_point(|k| *k <= x);
        s[i.saturating_sub(1).min(s.len() - 1)]
    }

    pub fn add(&self, other: &Sampled1D) -> Result<Sampled1D> {
        let lo = if self.extrapolate && other.extrapolate {
            self.lo().min(other.lo())
        } else if self.extrapolate {
            other.lo()
        } else if other.extrapolate {
            self.lo()
        } else {
            self.lo().max(other.lo())
        };
        let hi = if self.extrapolate && other.extrapolate {
            self.hi().max(other.hi())
        } else if self.extrapolate {
            other.hi()
        } else if other.extrapolate {
            self.hi()
        } else {
            self.hi().min(other.hi())
        };
        if lo > hi {
            return Err(Error::Infeasible { node: None });
        }
        let mut knots: Vec<f64> =
            self.knots.iter().chain(&other.knots).copied().filter(|k| *k >= lo && *k <= hi).collect();
        knots.push(lo);
        knots.push(hi);
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
        let values = knots.iter().map(|&k| self.eval(k) + other.eval(k)).collect();
        Ok(Sampled1D { knots, values, extrapolate: self.extrapolate && other.extrapolate })
    }

    pub fn tilt(&self, v: f64) -> Sampled1D {
        Sampled1D {
            knots: self.knots.clone(),
            values: self.knots.iter().zip(&self.values).map(|(k, y)| y + v * k).collect(),
            extrapolate: self.extrapolate,
        }
    }

    pub fn scale(&self, alpha: f64) -> Sampled1D {
        Sampled1D {
            knots: self.knots.clone(),
            values: self.values.iter().map(|y| y * alpha).collect(),
            extrapolate: self.extrapolate,
        }
    }

    pub fn add_constant(&self, c: f64) -> Sampled1D {
        Sampled1D { values: self.values.iter().map(|y| y + c).collect(), ..self.clone() }
    }

    /// `z -> f(m z + w)` for scalar `m != 0`.
    pub fn compose_scalar(&self, m: f64, w: f64) -> Sampled1D {
        let mut pairs: Vec<(f64, f64)> =
            self.knots.iter().zip(&self.values).map(|(k, y)| ((k - w) / m, *y)).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Sampled1D {
            knots: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
            extrapolate: self.extrapolate,
        }
    }

    /// Same function as a max of affine pieces (exact: the interpolant is convex).
    pub fn to_polyhedral(&self) -> Polyhedral {
        let mut pieces: Vec<Piece> = self
            .slopes()
            .iter()
            .zip(self.knots.iter().zip(&self.values))
            .map(|(s, (k, y))| Piece::new(vec![*s], y - s * k))
            .collect();
        if pieces.is_empty() {
            pieces.push(Piece::new(vec![0.0], self.values[0]));
        }
        let mut domain = Inequalities::new(1);
        if !self.extrapolate {
            domain.push(vec![1.0], self.hi());
            domain.push(vec![-1.0], -self.lo());
        }
        Polyhedral { dim: 1, pieces, domain }
    }

    /// Limiting slopes as a 1-D polyhedral recession function.
    pub fn recession(&self) -> Polyhedral {
        if self.extrapolate {
            let (s0, s1) = self.end_slopes();
            Polyhedral { dim: 1, pieces: vec![Piece::new(vec![s0], 0.0), Piece::new(vec![s1], 0.0)], domain: Inequalities::new(1) }
        } else {
            Polyhedral::indicator(Inequalities::with_rows(
                1,
                vec![Halfspace::new(vec![1.0], 0.0), Halfspace::new(vec![-1.0], 0.0)],
            ))
        }
    }

    /// Global minimum and the least-magnitude minimizer.
    pub fn minimize(&self, strict: bool) -> Result<(f64, f64)> {
        if self.extrapolate {
            let (s0, s1) = self.end_slopes();
            if s0 > 0.0 || s1 < 0.0 {
                return Err(Error::UnboundedBelow { node: None });
            }
            if strict && self.knots.len() > 1 && (s0 == 0.0 || s1 == 0.0) && s0 != s1 {
                return Err(Error::NonLinearRecession { node: None });
            }
        }
        let best = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * (1.0 + best.abs());
        let ties: Vec<usize> = (0..self.values.len()).filter(|&i| self.values[i] <= best + tol).collect();
        let (mut a, mut b) = (self.knots[ties[0]], self.knots[*ties.last().unwrap()]);
        if self.extrapolate {
            let (s0, s1) = self.end_slopes();
            if s0 == 0.0 && ties[0] == 0 {
                a = f64::NEG_INFINITY;
            }
            if s1 == 0.0 && *ties.last().unwrap() == self.knots.len() - 1 {
                b = f64::INFINITY;
            }
        }
        Ok((best, 0.0f64.clamp(a, b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let f = Sampled1D::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 4.0], false).unwrap();
        assert_eq!(f.eval(1.5), 2.5);
        assert_eq!(f.eval(2.5), f64::INFINITY);
        let g = Sampled1D { extrapolate: true, ..f };
        assert_eq!(g.eval(3.0), 7.0);
        assert_eq!(g.eval(-1.0), -1.0);
    }

    #[test]
    fn rejects_nonconvex() {
        assert!(Sampled1D::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.5], false).is_err());
    }

    #[test]
    fn minimize_picks_smallest_magnitude() {
        let f = Sampled1D::new(vec![-2.0, -1.0, 1.0, 2.0], vec![1.0, 0.0, 0.0, 1.0], false).unwrap();
        assert_eq!(f.minimize(true).unwrap(), (0.0, 0.0));
        let g = Sampled1D::new(vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0], false).unwrap();
        assert_eq!(g.minimize(true).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn sum_on_common_grid() {
        let f = Sampled1D::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 4.0], false).unwrap();
        let g = Sampled1D::new(vec![0.5, 1.5], vec![1.0, 1.0], false).unwrap();
        let s = f.add(&g).unwrap();
        assert_eq!(s.lo(), 0.5);
        assert_eq!(s.hi(), 1.5);
        assert_eq!(s.eval(1.0), 2.0);
    }
}
