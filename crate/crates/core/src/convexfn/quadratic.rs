//! `f(x) = ½ x'Qx + q'x + c` restricted to an affine set `{x : Ax = b}`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, PSD_TOL};

/// Equality constraints kept in reduced form (orthonormal rows).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSet {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// false when the raw system had no solution
    pub consistent: bool,
}

impl AffineSet {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let (a, b, consistent) = linalg::reduce_equalities(a, b);
        AffineSet { a, b, consistent }
    }

    pub fn free(dim: usize) -> Self {
        AffineSet { a: DMatrix::zeros(0, dim), b: DVector::zeros(0), consistent: true }
    }

    pub fn is_free(&self) -> bool {
        self.consistent && self.a.nrows() == 0
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        if !self.consistent {
            return false;
        }
        if self.a.nrows() == 0 {
            return true;
        }
        let r = &self.a * x - &self.b;
        r.amax() <= 1e-9 * (1.0 + self.b.amax() + x.amax())
    }

    fn stack(&self, other: &AffineSet) -> AffineSet {
        let n = self.a.ncols();
        let (r1, r2) = (self.a.nrows(), other.a.nrows());
        let mut a = DMatrix::zeros(r1 + r2, n);
        a.view_mut((0, 0), (r1, n)).copy_from(&self.a);
        a.view_mut((r1, 0), (r2, n)).copy_from(&other.a);
        let mut b = DVector::zeros(r1 + r2);
        b.rows_mut(0, r1).copy_from(&self.b);
        b.rows_mut(r1, r2).copy_from(&other.b);
        let mut out = AffineSet::new(&a, &b);
        out.consistent &= self.consistent && other.consistent;
        out
    }

    /// Constraints on `z` for `x = M z + w`.
    fn pullback(&self, m: &DMatrix<f64>, w: &DVector<f64>) -> AffineSet {
        if self.a.nrows() == 0 {
            let mut s = AffineSet::free(m.ncols());
            s.consistent = self.consistent;
            return s;
        }
        let mut out = AffineSet::new(&(&self.a * m), &(&self.b - &self.a * w));
        out.consistent &= self.consistent;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub c: f64,
    pub domain: AffineSet,
}

/// Output of [`Quadratic::partial_min`].
#[derive(Debug, Clone)]
pub struct QuadMin {
    pub value: Quadratic,
    /// `u(x) = gain * x + offset`
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// orthonormal basis of the minimized block's lineality space
    pub lineality: DMatrix<f64>,
}

impl Quadratic {
    pub fn new(q: DMatrix<f64>, lin: DVector<f64>, c: f64) -> Result<Self> {
        let d = lin.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: q.nrows() });
        }
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-9 * (1.0 + q.amax()) {
            return Err(Error::InvalidFunction("quadratic matrix is not symmetric".into()));
        }
        let q = linalg::symmetrize(&q);
        if d > 0 && linalg::min_eigenvalue(&q) < -PSD_TOL * (1.0 + q.amax()) {
            return Err(Error::InvalidFunction("quadratic matrix is not positive semidefinite".into()));
        }
        Ok(Quadratic { q, lin, c, domain: AffineSet::free(d) })
    }

    pub fn zero(dim: usize) -> Self {
        Quadratic { q: DMatrix::zeros(dim, dim), lin: DVector::zeros(dim), c: 0.0, domain: AffineSet::free(dim) }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Quadratic { c, ..Quadratic::zero(dim) }
    }

    pub fn linear(lin: DVector<f64>, c: f64) -> Self {
        let d = lin.len();
        Quadratic { q: DMatrix::zeros(d, d), lin, c, domain: AffineSet::free(d) }
    }

    /// Add the constraint `a x = b`.
    pub fn constrained(mut self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: a.ncols() });
        }
        self.domain = self.domain.stack(&AffineSet::new(a, b));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn is_empty_domain(&self) -> bool {
        !self.domain.consistent
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        if !self.domain.contains(x) {
            return f64::INFINITY;
        }
        0.5 * x.dot(&(&self.q * x)) + self.lin.dot(x) + self.c
    }

    pub fn add(&self, other: &Quadratic) -> Quadratic {
        Quadratic {
            q: &self.q + &other.q,
            lin: &self.lin + &other.lin,
            c: self.c + other.c,
            domain: if other.domain.is_free() {
                self.domain.clone()
            } else if self.domain.is_free() {
                other.domain.clone()
            } else {
                self.domain.stack(&other.domain)
            },
        }
    }

    pub fn tilt(&self, v: &DVector<f64>) -> Quadratic {
        Quadratic { lin: &self.lin + v, ..self.clone() }
    }

    /// `α f` with the domain kept at `α = 0`.
    pub fn scale(&self, alpha: f64) -> Quadratic {
        Quadratic { q: &self.q * alpha, lin: &self.lin * alpha, c: self.c * alpha, domain: self.domain.clone() }
    }

    /// `z -> f(M z + w)`.
    pub fn compose_affine(&self, m: &DMatrix<f64>, w: &DVector<f64>) -> Quadratic {
        let qm = &self.q * m;
        let qw = &self.q * w;
        Quadratic {
            q: linalg::symmetrize(&(m.transpose() * &qm)),
            lin: m.transpose() * (&qw + &self.lin),
            c: 0.5 * w.dot(&qw) + self.lin.dot(w) + self.c,
            domain: self.domain.pullback(m, w),
        }
    }

    /// `d -> q·d` on `ker Q ∩ ker A`, `+inf` elsewhere.
    pub fn recession(&self) -> Quadratic {
        let d = self.dim();
        if !self.domain.consistent {
            return self.clone();
        }
        let range = linalg::row_space(&self.q).transpose();
        let (r1, r2) = (self.domain.a.nrows(), range.nrows());
        let mut a = DMatrix::zeros(r1 + r2, d);
        a.view_mut((0, 0), (r1, d)).copy_from(&self.domain.a);
        a.view_mut((r1, 0), (r2, d)).copy_from(&range);
        Quadratic {
            q: DMatrix::zeros(d, d),
            lin: self.lin.clone(),
            c: 0.0,
            domain: AffineSet::new(&a, &DVector::zeros(r1 + r2)),
        }
    }

    /// Rows `R` and functional `ℓ` such that the recession function is `ℓ·d` on `ker R`.
    pub fn linearity(&self) -> (DMatrix<f64>, DVector<f64>) {
        let rec = self.recession();
        (rec.domain.a, rec.lin)
    }

    /// Minimize over the last `d2` coordinates.
    pub fn partial_min(&self, d2: usize) -> Result<QuadMin> {
        let d = self.dim();
        if d2 > d {
            return Err(Error::DimensionMismatch { expected: d, found: d2 });
        }
        let d1 = d - d2;
        if !self.domain.consistent {
            return Err(Error::Infeasible { node: None });
        }
        let qxx = self.q.view((0, 0), (d1, d1)).into_owned();
        let qxu = self.q.view((0, d1), (d1, d2)).into_owned();
        let quu = self.q.view((d1, d1), (d2, d2)).into_owned();
        let qx = self.lin.rows(0, d1).into_owned();
        let qu = self.lin.rows(d1, d2).into_owned();

        // u = G x + g + Z w parametrizes the constraint set for each feasible x
        let r = self.domain.a.nrows();
        let ax = self.domain.a.view((0, 0), (r, d1)).into_owned();
        let au = self.domain.a.view((0, d1), (r, d2)).into_owned();
        let (z, gmat, gvec, xdomain) = if r == 0 {
            (DMatrix::identity(d2, d2), DMatrix::zeros(d2, d1), DVector::zeros(d2), AffineSet::free(d1))
        } else {
            let au_pinv = linalg::pinv(&au);
            let z = linalg::null_space(&au);
            let proj = DMatrix::identity(r, r) - &au * &au_pinv;
            let xdomain = AffineSet::new(&(&proj * &ax), &(&proj * &self.domain.b));
            (z, -(&au_pinv * &ax), &au_pinv * &self.domain.b, xdomain)
        };
        if !xdomain.consistent {
            return Err(Error::Infeasible { node: None });
        }
        let cross = &qxu + gmat.transpose() * &quu; // d1 x d2
        let mxx = &qxx + &qxu * &gmat + gmat.transpose() * qxu.transpose() + gmat.transpose() * &quu * &gmat;
        let mxw = &cross * &z;
        let mww = z.transpose() * &quu * &z;
        let mx = &qx + &cross * &gvec + gmat.transpose() * &qu;
        let quu_g = &quu * &gvec;
        let mw = z.transpose() * (&quu_g + &qu);
        let c0 = self.c + 0.5 * gvec.dot(&quu_g) + qu.dot(&gvec);

        let (hinv, ker) = linalg::psd_pinv_kernel(&mww);
        // directions of zero curvature must carry zero slope
        if ker.ncols() > 0 {
            let slope = ker.transpose() * &mw;
            let scale = 1.0 + mw.amax() + mww.amax();
            if slope.amax() > 1e-9 * scale {
                return Err(Error::UnboundedBelow { node: None });
            }
        }
        let mwx = mxw.transpose();
        let q = linalg::symmetrize(&(&mxx - &mxw * &hinv * &mwx));
        let lin = &mx - &mxw * &hinv * &mw;
        let c = c0 - 0.5 * mw.dot(&(&hinv * &mw));
        let gain = &gmat - &z * &hinv * &mwx;
        let offset = &gvec - &z * &hinv * &mw;
        let lineality = &z * &ker;
        Ok(QuadMin { value: Quadratic { q, lin, c, domain: xdomain }, gain, offset, lineality })
    }

    /// Pad with `extra` trailing free coordinates.
    pub fn extend(&self, extra: usize) -> Quadratic {
        let d = self.dim();
        let n = d + extra;
        let mut q = DMatrix::zeros(n, n);
        q.view_mut((0, 0), (d, d)).copy_from(&self.q);
        let mut lin = DVector::zeros(n);
        lin.rows_mut(0, d).copy_from(&self.lin);
        let r = self.domain.a.nrows();
        let mut a = DMatrix::zeros(r, n);
        a.view_mut((0, 0), (r, d)).copy_from(&self.domain.a);
        Quadratic {
            q,
            lin,
            c: self.c,
            domain: AffineSet { a, b: self.domain.b.clone(), consistent: self.domain.consistent },
        }
    }

    pub fn lin_vec(&self) -> Vec<f64> {
        self.lin.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q1(a: f64, b: f64, c: f64) -> Quadratic {
        Quadratic::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b), c).unwrap()
    }

    #[test]
    fn eval_half_square() {
        assert_eq!(q1(1.0, 0.0, 0.0).eval(&DVector::from_element(1, 2.0)), 2.0);
    }

    #[test]
    fn sum_of_squares() {
        // x² + (x-2)² = 2x² - 4x + 4
        let s = q1(2.0, 0.0, 0.0).add(&q1(2.0, -4.0, 4.0));
        assert_eq!((s.q[(0, 0)], s.lin[0], s.c), (4.0, -4.0, 4.0));
    }

    #[test]
    fn partial_min_examples() {
        // ½u² + xu is only convex in u; the block formula still applies
        let f = Quadratic { q: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]), ..Quadratic::zero(2) };
        let m = f.partial_min(1).unwrap();
        for x in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            let xv = DVector::from_element(1, x);
            let g = m.value.eval(&xv);
            assert!((g + 0.5 * x * x).abs() < 1e-12);
            // dense scan over u
            let scan = (-4000..=4000)
                .map(|k| {
                    let u = k as f64 * 1e-3;
                    0.5 * u * u + x * u
                })
                .fold(f64::INFINITY, f64::min);
            assert!((g - scan).abs() < 1e-6);
            assert!(((&m.gain * &xv + &m.offset)[0] + x).abs() < 1e-12);
        }
        assert!(Quadratic::new(f.q.clone(), DVector::zeros(2), 0.0).is_err());

        // ½(x - u)² -> 0, u = x
        let f = Quadratic::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]), DVector::zeros(2), 0.0).unwrap();
        let m = f.partial_min(1).unwrap();
        assert!(m.value.q.amax() < 1e-12 && m.value.c.abs() < 1e-12);
        assert!((m.gain[(0, 0)] - 1.0).abs() < 1e-12);

        // ½x² with u free -> ½x², u = 0, lineality span{e_u}
        let f = Quadratic::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DVector::zeros(2), 0.0).unwrap();
        let m = f.partial_min(1).unwrap();
        assert!((m.value.q[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(m.gain.amax() < 1e-12 && m.offset.amax() < 1e-12);
        assert_eq!(m.lineality.ncols(), 1);
    }

    #[test]
    fn linear_slope_in_free_direction_is_unbounded() {
        let f = Quadratic::linear(DVector::from_vec(alloc::vec![0.0, 1.0]), 0.0);
        assert!(matches!(f.partial_min(1), Err(Error::UnboundedBelow { .. })));
    }

    #[test]
    fn equality_constrained_minimum() {
        // min ½(x² + u²) s.t. x + u = 2 over u: u = 2 - x -> ½x² + ½(2-x)²
        let f = Quadratic::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0)
            .unwrap()
            .constrained(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), &DVector::from_element(1, 2.0))
            .unwrap();
        let m = f.partial_min(1).unwrap();
        for x in [-1.0, 0.0, 0.5, 3.0] {
            let xv = DVector::from_element(1, x);
            let expect = 0.5 * x * x + 0.5 * (2.0 - x) * (2.0 - x);
            assert!((m.value.eval(&xv) - expect).abs() < 1e-12);
            let u = (&m.gain * &xv + &m.offset)[0];
            assert!((u - (2.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn recession_of_strictly_convex_is_origin_indicator() {
        let r = q1(1.0, 1.0, 0.0).recession();
        assert_eq!(r.eval(&DVector::from_element(1, 0.0)), 0.0);
        assert_eq!(r.eval(&DVector::from_element(1, 1.0)), f64::INFINITY);
    }
}
