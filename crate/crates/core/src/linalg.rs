//! Dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Relative rank tolerance for SVD/eigen thresholds.
pub const RANK_TOL: f64 = 1e-9;
/// Eigenvalue tolerance for positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-10;

fn cutoff(max_sv: f64) -> f64 {
    RANK_TOL * max_sv.max(1.0)
}

/// Full SVD of `a` (padded to square so `v` is complete).
/// Returns singular values and right singular vectors as columns.
fn right_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let padded = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.resize(n, 0.0);
    let mut v = vt.transpose();
    if v.ncols() < n {
        // only possible when m >= n, in which case v_t is n x n already
        v = v.resize_horizontally(n, 0.0);
    }
    (sv, v)
}

/// Orthonormal basis (columns) of `ker a`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let (sv, v) = right_svd(a);
    let smax = sv.iter().fold(0.0f64, |m, s| m.max(*s));
    let tol = cutoff(smax);
    let cols: Vec<usize> = (0..n).filter(|&i| sv[i] <= tol).collect();
    select_columns(&v, &cols)
}

/// Orthonormal basis (columns) of the row space of `a`.
pub fn row_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let (sv, v) = right_svd(a);
    let smax = sv.iter().fold(0.0f64, |m, s| m.max(*s));
    let tol = cutoff(smax);
    let cols: Vec<usize> = (0..n).filter(|&i| sv[i] > tol).collect();
    select_columns(&v, &cols)
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (j, &c) in cols.iter().enumerate() {
        out.set_column(j, &m.column(c));
    }
    out
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |acc, s| acc.max(*s));
    let tol = cutoff(smax);
    svd.pseudo_inverse(tol).expect("svd with u and v")
}

/// Symmetric eigen-decomposition `(values, vectors as columns)`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    if m.nrows() == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let e = symmetrize(m).symmetric_eigen();
    (e.eigenvalues, e.eigenvectors)
}

/// Pseudo-inverse of a symmetric PSD matrix plus an orthonormal basis of its kernel.
pub fn psd_pinv_kernel(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
    }
    let (vals, vecs) = sym_eigen(m);
    let lmax = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = cutoff(lmax);
    let mut inv = DMatrix::zeros(n, n);
    let mut ker = Vec::new();
    for i in 0..n {
        let col = vecs.column(i);
        if vals[i] > tol {
            inv += (col * col.transpose()) / vals[i];
        } else {
            ker.push(i);
        }
    }
    (inv, select_columns(&vecs, &ker))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` when empty).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(f64::INFINITY, |acc, v| acc.min(*v))
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |acc, s| acc.min(*s))
}

/// Reduce `a x = b` to orthonormal independent rows.
///
/// Returns `(rows, rhs, consistent)`; `consistent` is false when `b` leaves the
/// range of `a` (empty solution set).
pub fn reduce_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, bool) {
    let n = a.ncols();
    if a.nrows() == 0 {
        return (DMatrix::zeros(0, n), DVector::zeros(0), true);
    }
    let basis = row_space(a); // n x r
    let r = basis.ncols();
    let rows = basis.transpose();
    if r == 0 {
        let consistent = b.amax() <= 1e-9 * (1.0 + b.amax());
        return (DMatrix::zeros(0, n), DVector::zeros(0), consistent);
    }
    // particular least-squares solution, then rhs in the reduced frame
    let x0 = pinv(a) * b;
    let resid = a * &x0 - b;
    let consistent = resid.amax() <= 1e-8 * (1.0 + b.amax());
    let rhs = &rows * &x0;
    (rows, rhs, consistent)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    pinv(a) * b
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
