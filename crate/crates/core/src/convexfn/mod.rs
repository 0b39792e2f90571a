//! Representable extended-real convex functions.
//!
//! Three backends: [`Quadratic`] (with affine equalities), [`Polyhedral`]
//! (max-affine on a polyhedron) and [`Sampled1D`]. Sums that mix the first two
//! are kept as an evaluation-only [`ConvexFn::Sum`].

pub mod exact;
pub mod fm;
pub mod polyhedral;
pub mod quadratic;
pub mod sampled;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub use fm::{fm_project, Halfspace, Inequalities};
pub use polyhedral::{Piece, Polyhedral};
pub use quadratic::{AffineSet, Quadratic};
pub use sampled::Sampled1D;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexFn {
    Quadratic(Quadratic),
    Polyhedral(Polyhedral),
    Sampled1D(Sampled1D),
    /// Pointwise sum of mixed backends; supports evaluation only.
    Sum(Vec<ConvexFn>),
}

/// How partial minimization treats a recession set that is not a linear space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecessionPolicy {
    #[default]
    Strict,
    /// Continue and report it in [`PartialMin::linear`].
    Annotate,
}

/// Orthonormal basis (columns) of a lineality space; zero columns means `{0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinealitySpace {
    pub basis: DMatrix<f64>,
}

impl LinealitySpace {
    pub fn trivial(dim: usize) -> Self {
        LinealitySpace { basis: DMatrix::zeros(dim, 0) }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_trivial(&self) -> bool {
        self.basis.ncols() == 0
    }

    /// Largest `|b·x|` over basis vectors `b`.
    pub fn overlap(&self, x: &[f64]) -> f64 {
        if self.basis.nrows() != x.len() {
            return 0.0;
        }
        let xv = DVector::from_column_slice(x);
        (self.basis.transpose() * xv).amax()
    }
}

/// Maps the kept coordinates to a minimizer of the eliminated block.
#[derive(Debug, Clone)]
pub enum Selector {
    Affine { gain: DMatrix<f64>, offset: DVector<f64> },
    Polyhedral { f: Polyhedral, d2: usize, lineality: DMatrix<f64> },
    Constant(Vec<f64>),
}

impl Selector {
    pub fn select(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Selector::Affine { gain, offset } => {
                if gain.ncols() != x.len() {
                    return Err(Error::DimensionMismatch { expected: gain.ncols(), found: x.len() });
                }
                let u = gain * DVector::from_column_slice(x) + offset;
                Ok(u.iter().copied().collect())
            }
            Selector::Polyhedral { f, d2, lineality } => f.select(*d2, lineality, x),
            Selector::Constant(u) => Ok(u.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PartialMin {
    pub value: ConvexFn,
    pub selector: Selector,
    pub lineality: LinealitySpace,
    pub linear: bool,
}

impl ConvexFn {
    pub fn zero(dim: usize) -> ConvexFn {
        ConvexFn::Quadratic(Quadratic::zero(dim))
    }

    pub fn constant(dim: usize, c: f64) -> ConvexFn {
        ConvexFn::Quadratic(Quadratic::constant(dim, c))
    }

    /// `½ x'Qx + q'x + c` (validated symmetric PSD).
    pub fn quadratic(q: DMatrix<f64>, lin: DVector<f64>, c: f64) -> Result<ConvexFn> {
        Ok(ConvexFn::Quadratic(Quadratic::new(q, lin, c)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexFn::Quadratic(q) => q.dim(),
            ConvexFn::Polyhedral(p) => p.dim,
            ConvexFn::Sampled1D(_) => 1,
            ConvexFn::Sum(parts) => parts.first().map_or(0, |p| p.dim()),
        }
    }

    pub fn backend_name(&self) -> &'static str {
        match self {
            ConvexFn::Quadratic(_) => "quadratic",
            ConvexFn::Polyhedral(_) => "polyhedral",
            ConvexFn::Sampled1D(_) => "sampled1d",
            ConvexFn::Sum(_) => "sum",
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: n });
        }
        Ok(())
    }

    /// `f(x)`, `+inf` outside the domain.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(match self {
            ConvexFn::Quadratic(q) => q.eval(&DVector::from_column_slice(x)),
            ConvexFn::Polyhedral(p) => p.eval(x),
            ConvexFn::Sampled1D(s) => s.eval(x[0]),
            ConvexFn::Sum(parts) => {
                let mut total = 0.0;
                for p in parts {
                    total += p.eval(x)?;
                }
                total
            }
        })
    }

    pub fn add(&self, other: &ConvexFn) -> Result<ConvexFn> {
        self.check_dim(other.dim())?;
        use ConvexFn::*;
        Ok(match (self, other) {
            (Quadratic(a), Quadratic(b)) => Quadratic(a.add(b)),
            (Polyhedral(a), Polyhedral(b)) => Polyhedral(a.add(b)?),
            (Sampled1D(a), Sampled1D(b)) => Sampled1D(a.add(b)?),
            (Quadratic(a), other) | (other, Quadratic(a)) if a.q.amax() == 0.0 && a.domain.is_free() => {
                // a plain affine term folds into any backend
                other.tilt(a.lin.as_slice())?.add_constant(a.c)
            }
            (Sum(a), Sum(b)) => Sum(a.iter().chain(b).cloned().collect()),
            (Sum(a), f) | (f, Sum(a)) => {
                let mut parts = a.clone();
                parts.push(f.clone());
                Sum(parts)
            }
            (Quadratic(_), Polyhedral(_)) | (Polyhedral(_), Quadratic(_)) => Sum(vec![self.clone(), other.clone()]),
            _ => return Err(Error::BackendClash("sampled functions only combine with sampled functions")),
        })
    }

    pub fn add_constant(&self, c: f64) -> ConvexFn {
        match self {
            ConvexFn::Quadratic(q) => ConvexFn::Quadratic(Quadratic { c: q.c + c, ..q.clone() }),
            ConvexFn::Polyhedral(p) => ConvexFn::Polyhedral(p.add_constant(c)),
            ConvexFn::Sampled1D(s) => ConvexFn::Sampled1D(s.add_constant(c)),
            ConvexFn::Sum(parts) => {
                let mut parts = parts.clone();
                parts[0] = parts[0].add_constant(c);
                ConvexFn::Sum(parts)
            }
        }
    }

    /// `x -> f(x) + v·x`.
    pub fn tilt(&self, v: &[f64]) -> Result<ConvexFn> {
        self.check_dim(v.len())?;
        Ok(match self {
            ConvexFn::Quadratic(q) => ConvexFn::Quadratic(q.tilt(&DVector::from_column_slice(v))),
            ConvexFn::Polyhedral(p) => ConvexFn::Polyhedral(p.tilt(v)),
            ConvexFn::Sampled1D(s) => ConvexFn::Sampled1D(s.tilt(v[0])),
            ConvexFn::Sum(parts) => {
                let mut parts = parts.clone();
                parts[0] = parts[0].tilt(v)?;
                ConvexFn::Sum(parts)
            }
        })
    }

    /// `α f` for `α >= 0`; at `α = 0` the closed-domain indicator is kept.
    pub fn scale(&self, alpha: f64) -> Result<ConvexFn> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidInput(alloc::format!("scale factor {alpha} must be finite and >= 0")));
        }
        Ok(match self {
            ConvexFn::Quadratic(q) => ConvexFn::Quadratic(q.scale(alpha)),
            ConvexFn::Polyhedral(p) => ConvexFn::Polyhedral(p.scale(alpha)),
            ConvexFn::Sampled1D(s) => ConvexFn::Sampled1D(s.scale(alpha)),
            ConvexFn::Sum(parts) => ConvexFn::Sum(parts.iter().map(|p| p.scale(alpha)).collect::<Result<_>>()?),
        })
    }

    /// `z -> f(M z + w)`, `M` of shape `dim x k`.
    pub fn compose_affine(&self, m: &DMatrix<f64>, w: &DVector<f64>) -> Result<ConvexFn> {
        self.check_dim(m.nrows())?;
        if w.len() != m.nrows() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: w.len() });
        }
        Ok(match self {
            ConvexFn::Quadratic(q) => ConvexFn::Quadratic(q.compose_affine(m, w)),
            ConvexFn::Polyhedral(p) => ConvexFn::Polyhedral(p.compose_affine(m, w)),
            ConvexFn::Sampled1D(s) => {
                if m.ncols() != 1 {
                    return Err(Error::BackendClash("sampled functions compose only with scalar maps"));
                }
                let slope = m[(0, 0)];
                if slope == 0.0 {
                    let v = s.eval(w[0]);
                    if !v.is_finite() {
                        return Err(Error::Infeasible { node: None });
                    }
                    ConvexFn::constant(1, v)
                } else {
                    ConvexFn::Sampled1D(s.compose_scalar(slope, w[0]))
                }
            }
            ConvexFn::Sum(parts) => {
                ConvexFn::Sum(parts.iter().map(|p| p.compose_affine(m, w)).collect::<Result<_>>()?)
            }
        })
    }

    /// `(x, y) -> f(x)` with `extra` trailing free coordinates `y`.
    pub fn extend(&self, extra: usize) -> Result<ConvexFn> {
        if extra == 0 {
            return Ok(self.clone());
        }
        Ok(match self {
            ConvexFn::Quadratic(q) => ConvexFn::Quadratic(q.extend(extra)),
            ConvexFn::Polyhedral(p) => ConvexFn::Polyhedral(p.extend(extra)),
            ConvexFn::Sampled1D(_) => return Err(Error::BackendClash("sampled functions cannot be extended")),
            ConvexFn::Sum(parts) => ConvexFn::Sum(parts.iter().map(|p| p.extend(extra)).collect::<Result<_>>()?),
        })
    }

    /// Fix the leading coordinates at `prefix`: `y -> f(prefix, y)`.
    pub fn restrict(&self, prefix: &[f64]) -> Result<ConvexFn> {
        let d = self.dim();
        if prefix.len() > d {
            return Err(Error::DimensionMismatch { expected: d, found: prefix.len() });
        }
        let k = d - prefix.len();
        let mut m = DMatrix::zeros(d, k);
        for i in 0..k {
            m[(prefix.len() + i, i)] = 1.0;
        }
        let mut w = DVector::zeros(d);
        w.rows_mut(0, prefix.len()).copy_from_slice(prefix);
        self.compose_affine(&m, &w)
    }

    /// Recession function `f^inf`.
    pub fn recession(&self) -> ConvexFn {
        match self {
            ConvexFn::Quadratic(q) => ConvexFn::Quadratic(q.recession()),
            ConvexFn::Polyhedral(p) => ConvexFn::Polyhedral(p.recession()),
            ConvexFn::Sampled1D(s) => ConvexFn::Polyhedral(s.recession()),
            ConvexFn::Sum(parts) => {
                let recs: Vec<ConvexFn> = parts.iter().map(|p| p.recession()).collect();
                recs.iter().skip(1).fold(recs[0].clone(), |acc, r| acc.add(r).unwrap_or(acc))
            }
        }
    }

    /// Rows `R` and functional `ℓ` with `f^inf(d) = ℓ·d` exactly on `ker R`.
    fn linearity(&self) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            ConvexFn::Quadratic(q) => q.linearity(),
            ConvexFn::Polyhedral(p) => p.recession().linearity(),
            ConvexFn::Sampled1D(s) => s.recession().linearity(),
            ConvexFn::Sum(parts) => {
                let d = self.dim();
                let mut rows: Vec<Vec<f64>> = Vec::new();
                let mut ell = DVector::zeros(d);
                for p in parts {
                    let (r, l) = p.linearity();
                    for i in 0..r.nrows() {
                        rows.push(r.row(i).iter().copied().collect());
                    }
                    ell += l;
                }
                (crate::linalg::from_rows(&rows, d), ell)
            }
        }
    }

    /// Minimize over the last `d2` coordinates (strict recession policy).
    pub fn partial_min(&self, d2: usize) -> Result<PartialMin> {
        self.partial_min_with(d2, RecessionPolicy::Strict)
    }

    pub fn partial_min_with(&self, d2: usize, policy: RecessionPolicy) -> Result<PartialMin> {
        if d2 > self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: d2 });
        }
        let strict = policy == RecessionPolicy::Strict;
        match self {
            ConvexFn::Quadratic(q) => {
                let m = q.partial_min(d2)?;
                Ok(PartialMin {
                    value: ConvexFn::Quadratic(m.value),
                    selector: Selector::Affine { gain: m.gain, offset: m.offset },
                    lineality: LinealitySpace { basis: m.lineality },
                    linear: true,
                })
            }
            ConvexFn::Polyhedral(p) => {
                let m = p.partial_min(d2, strict)?;
                Ok(PartialMin {
                    value: ConvexFn::Polyhedral(m.value),
                    selector: Selector::Polyhedral { f: p.clone(), d2, lineality: m.lineality.clone() },
                    lineality: LinealitySpace { basis: m.lineality },
                    linear: m.linear,
                })
            }
            ConvexFn::Sampled1D(s) => {
                if d2 == 0 {
                    return Ok(PartialMin {
                        value: self.clone(),
                        selector: Selector::Constant(Vec::new()),
                        lineality: LinealitySpace::trivial(0),
                        linear: true,
                    });
                }
                let (value, arg) = s.minimize(strict)?;
                let (s0, s1) = if s.knots.len() > 1 {
                    let sl = s.slopes();
                    (sl[0], *sl.last().unwrap())
                } else {
                    (0.0, 0.0)
                };
                let linear = !(s.extrapolate && (s0 == 0.0 || s1 == 0.0) && s0 != s1);
                let lineality = if s.extrapolate && s0 == 0.0 && s1 == 0.0 {
                    LinealitySpace { basis: DMatrix::from_element(1, 1, 1.0) }
                } else {
                    LinealitySpace::trivial(1)
                };
                Ok(PartialMin {
                    value: ConvexFn::constant(0, value),
                    selector: Selector::Constant(vec![arg]),
                    lineality,
                    linear,
                })
            }
            ConvexFn::Sum(_) => Err(Error::BackendClash("mixed quadratic/polyhedral sums cannot be minimized")),
        }
    }

    /// Global minimum value and a minimizer (minimum-norm tie-break).
    pub fn minimize(&self) -> Result<(f64, Vec<f64>)> {
        let m = self.partial_min(self.dim())?;
        let x = m.selector.select(&[])?;
        Ok((m.value.eval(&[])?, x))
    }

    /// Convex conjugate `f*(y) = sup_x y·x - f(x)`; `+inf` when unbounded.
    pub fn conjugate(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y.len())?;
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let tilted = self.tilt(&neg)?;
        match tilted.partial_min_with(self.dim(), RecessionPolicy::Annotate) {
            Ok(m) => Ok(-m.value.eval(&[])?),
            Err(Error::UnboundedBelow { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }
}

/// Lineality space `{d : f(d) <= 0, f(-d) <= 0}` of a recession function.
pub fn lineality_space(rec: &ConvexFn) -> LinealitySpace {
    let (rows, ell) = rec.linearity();
    let d = rec.dim();
    let mut all = DMatrix::zeros(rows.nrows() + 1, d);
    all.view_mut((0, 0), (rows.nrows(), d)).copy_from(&rows);
    all.set_row(rows.nrows(), &ell.transpose());
    LinealitySpace { basis: crate::linalg::null_space(&all) }
}

/// Probability-weighted sum `Σ π_i f_i` (domain = intersection).
pub fn cond_expect_fn(children: &[(f64, &ConvexFn)]) -> Result<ConvexFn> {
    let mass: f64 = children.iter().map(|c| c.0).sum();
    if children.is_empty() || (mass - 1.0).abs() > crate::tree::MASS_TOL {
        return Err(Error::ProbabilityMass { node: alloc::string::String::new(), sum: mass });
    }
    weighted_sum(children)
}

/// `Σ w_i f_i` for nonnegative weights (no mass check).
pub fn weighted_sum(terms: &[(f64, &ConvexFn)]) -> Result<ConvexFn> {
    let mut acc = terms[0].1.scale(terms[0].0)?;
    for (w, f) in &terms[1..] {
        acc = acc.add(&f.scale(*w)?)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad1(a: f64, b: f64, c: f64) -> ConvexFn {
        ConvexFn::quadratic(DMatrix::from_element(1, 1, a), DVector::from_element(1, b), c).unwrap()
    }

    fn interval(lo: f64, hi: f64) -> ConvexFn {
        ConvexFn::Polyhedral(Polyhedral::indicator(Inequalities::with_rows(
            1,
            vec![Halfspace::new(vec![1.0], hi), Halfspace::new(vec![-1.0], -lo)],
        )))
    }

    #[test]
    fn cond_expect_examples() {
        // ½x² + ½(x-2)² with ½-weights -> x² - 2x + 2 (½Q form: Q = 2)
        let a = quad1(2.0, 0.0, 0.0);
        let b = quad1(2.0, -4.0, 4.0);
        let e = cond_expect_fn(&[(0.5, &a), (0.5, &b)]).unwrap();
        for x in [-1.0, 0.0, 1.0, 2.5] {
            assert!((e.eval(&[x]).unwrap() - (x * x - 2.0 * x + 2.0)).abs() < 1e-12);
        }
        // ½δ[0,1] + ½δ[1,2] -> δ{1}
        let e = cond_expect_fn(&[(0.5, &interval(0.0, 1.0)), (0.5, &interval(1.0, 2.0))]).unwrap();
        assert_eq!(e.eval(&[1.0]).unwrap(), 0.0);
        assert_eq!(e.eval(&[0.5]).unwrap(), f64::INFINITY);
        assert_eq!(e.eval(&[1.5]).unwrap(), f64::INFINITY);
        assert!(matches!(cond_expect_fn(&[(0.5, &a), (0.6, &b)]), Err(Error::ProbabilityMass { .. })));
    }

    #[test]
    fn combine_examples() {
        // scale(0) of δ[0,1] + x keeps the indicator
        let f = interval(0.0, 1.0).tilt(&[1.0]).unwrap();
        let z = f.scale(0.0).unwrap();
        assert_eq!(z.eval(&[0.7]).unwrap(), 0.0);
        assert_eq!(z.eval(&[1.7]).unwrap(), f64::INFINITY);
        // tilt of δ{0}
        let point = interval(0.0, 0.0).tilt(&[3.0]).unwrap();
        assert_eq!(point.eval(&[0.0]).unwrap(), 0.0);
        // mixing sampled with polyhedral is rejected
        let s = ConvexFn::Sampled1D(Sampled1D::new(vec![0.0, 1.0], vec![0.0, 1.0], false).unwrap());
        assert!(matches!(s.add(&interval(0.0, 1.0)), Err(Error::BackendClash(_))));
        // quadratic + polyhedral evaluates but cannot be minimized
        let mixed = quad1(1.0, 0.0, 0.0).add(&interval(-1.0, 1.0)).unwrap();
        assert_eq!(mixed.eval(&[1.0]).unwrap(), 0.5);
        assert!(matches!(mixed.partial_min(1), Err(Error::BackendClash(_))));
    }

    #[test]
    fn lineality_examples() {
        let r = quad1(1.0, 0.0, 0.0).recession();
        assert!(lineality_space(&r).is_trivial());
        let abs1 = ConvexFn::Polyhedral(
            Polyhedral::new(2, vec![Piece::new(vec![1.0, 0.0], 0.0), Piece::new(vec![-1.0, 0.0], 0.0)], vec![])
                .unwrap(),
        );
        let l = lineality_space(&abs1.recession());
        assert_eq!(l.dim(), 1);
        assert!((l.basis[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conjugate_of_half_square() {
        let f = quad1(1.0, 0.0, 0.0);
        for y in [-2.0, 0.0, 1.5] {
            assert!((f.conjugate(&[y]).unwrap() - 0.5 * y * y).abs() < 1e-12);
        }
        let lin = quad1(0.0, 1.0, 0.0);
        assert_eq!(lin.conjugate(&[2.0]).unwrap(), f64::INFINITY);
        assert_eq!(lin.conjugate(&[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn free_coordinate_selector_is_zero() {
        let f = ConvexFn::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DVector::zeros(2), 0.0)
            .unwrap();
        let m = f.partial_min(1).unwrap();
        let u = m.selector.select(&[0.7]).unwrap();
        assert_eq!(u, vec![0.0]);
        assert!(m.lineality.overlap(&u) < 1e-10);
    }
}
