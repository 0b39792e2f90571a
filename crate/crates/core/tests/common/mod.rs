#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochdp_core::convexfn::{Halfspace, Piece, Polyhedral};
use stochdp_core::{ConvexFn, ScenarioTree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Each node gets `1..=max_branching` children.
pub fn random_tree(rng: &mut ChaCha8Rng, horizon: usize, max_branching: usize) -> ScenarioTree {
    let mut parents = vec![None];
    let mut pr = vec![1.0];
    let mut layer = vec![0usize];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for &p in &layer {
            let k = rng.gen_range(1..=max_branching);
            for q in probs(rng, k) {
                parents.push(Some(p));
                pr.push(q);
                next.push(parents.len() - 1);
            }
        }
        layer = next;
    }
    ScenarioTree::from_parents(&parents, &pr).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

/// PSD quadratic, possibly singular.
pub fn random_quadratic(rng: &mut ChaCha8Rng, n: usize) -> ConvexFn {
    let rank = rng.gen_range(0..=n);
    let f = DMatrix::from_fn(n, rank, |_, _| rng.gen_range(-1.0..1.0));
    let lin = DVector::from_vec(random_vec(rng, n, 1.0));
    ConvexFn::quadratic(&f * f.transpose(), lin, rng.gen_range(-1.0..1.0)).unwrap()
}

/// Max of a few affine pieces on a box-like domain (sometimes unbounded).
pub fn random_polyhedral(rng: &mut ChaCha8Rng, n: usize) -> ConvexFn {
    let pieces = (0..rng.gen_range(1..=4)).map(|_| Piece::new(random_vec(rng, n, 2.0), rng.gen_range(-1.0..1.0))).collect();
    let domain = if rng.gen_bool(0.5) {
        (0..n)
            .map(|j| {
                let mut c = vec![0.0; n];
                c[j] = 1.0;
                Halfspace::new(c, rng.gen_range(2.0..5.0))
            })
            .collect()
    } else {
        vec![]
    };
    ConvexFn::Polyhedral(Polyhedral::new(n, pieces, domain).unwrap())
}

pub fn random_fn(rng: &mut ChaCha8Rng, n: usize, polyhedral: bool) -> ConvexFn {
    if polyhedral {
        random_polyhedral(rng, n)
    } else {
        random_quadratic(rng, n)
    }
}

/// `|a - b| <= tol (1 + |a| + |b|)`, with matching infinities.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= tol * (1.0 + a.abs() + b.abs())
}
