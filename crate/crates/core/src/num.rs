//! Scalar helpers: libm wrappers and the [`Scalar`] trait used by the exact
//! (rational) code paths.

use core::fmt::Debug;
use core::ops::Neg;

use num_bigint::BigInt;
pub use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

use crate::tree::{NodeId, ScenarioTree};

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// `|a - b| <= tol * max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = 1.0_f64.max(a.abs()).max(b.abs());
    (a - b).abs() <= tol * scale
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Field used by the generic conditional-expectation kernels.
///
/// `f64` is the default; [`BigRational`] gives exact arithmetic.
pub trait Scalar: Clone + Debug + PartialOrd + Num + Neg<Output = Self> {
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs_val(&self) -> Self;
    /// Equality up to `tol` for floats; exact for rationals.
    fn near(&self, other: &Self, tol: f64) -> bool;
    /// Conditional branch probability of `id` in this field.
    fn branch_prob(tree: &ScenarioTree, id: NodeId) -> Self {
        Self::from_f64(tree.prob(id))
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn near(&self, other: &Self, tol: f64) -> bool {
        (self - other).abs() <= tol
    }
}

impl Scalar for BigRational {
    /// Exact binary expansion of the float.
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).unwrap_or_else(BigRational::zero)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn near(&self, other: &Self, _tol: f64) -> bool {
        self == other
    }
    fn branch_prob(tree: &ScenarioTree, id: NodeId) -> Self {
        tree.exact_prob(id)
    }
}

/// `n / d` as an exact rational.
pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Parse `"p/q"`, `"p"` or a decimal literal into an exact rational.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Some((int, frac)) = text.split_once('.') {
        let neg = int.starts_with('-');
        let digits = alloc::format!("{}{}", int.trim_start_matches(['-', '+']), frac);
        let n: BigInt = digits.parse().ok()?;
        let d = num_traits::pow(BigInt::from(10), frac.len());
        let r = BigRational::new(n, d);
        return Some(if neg { -r } else { r });
    }
    let n: BigInt = text.parse().ok()?;
    Some(BigRational::from_integer(n))
}

pub fn rational_from_i64(x: i64) -> BigRational {
    BigRational::from_i64(x).unwrap()
}
