//! Laws of the conditional expectation of integrands on random trees, on the
//! float backends and exactly on rationals.

mod common;

use common::{close, random_fn, random_tree, random_vec, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use stochdp_core::convexfn::exact::{ExactPoly, ExactQuad, Ext};
use stochdp_core::convexfn::{cond_expect_fn, weighted_sum};
use stochdp_core::num::{ratio, BigRational};
use stochdp_core::tree::{pairing, perp_check, RawNode, ShadowPrice};
use stochdp_core::{AdaptedProcess, ConvexFn, NodeId, ScenarioTree};

const TOL: f64 = 1e-10;

fn expect_at(tree: &ScenarioTree, id: NodeId, f: &[ConvexFn]) -> ConvexFn {
    let kids: Vec<(f64, &ConvexFn)> = tree.children(id).iter().map(|&c| (tree.prob(c), &f[c.0])).collect();
    cond_expect_fn(&kids).unwrap()
}

fn direct(tree: &ScenarioTree, id: NodeId, f: &[ConvexFn], x: &[f64]) -> f64 {
    tree.children(id).iter().map(|&c| tree.prob(c) * f[c.0].eval(x).unwrap()).sum()
}

/// Affine minorant of `f` (a piece, or the tangent plane of a quadratic).
fn minorant(rng: &mut ChaCha8Rng, f: &ConvexFn) -> ConvexFn {
    let n = f.dim();
    match f {
        ConvexFn::Polyhedral(p) => {
            ConvexFn::quadratic(DMatrix::zeros(n, n), DVector::from_vec(p.pieces[0].grad.clone()), p.pieces[0].offset)
                .unwrap()
        }
        ConvexFn::Quadratic(q) => {
            let x0 = DVector::from_vec(random_vec(rng, n, 1.0));
            let g = &q.q * &x0 + &q.lin;
            let c = q.eval(&x0) - g.dot(&x0);
            ConvexFn::quadratic(DMatrix::zeros(n, n), g, c).unwrap()
        }
        _ => unreachable!(),
    }
}

struct Case {
    tree: ScenarioTree,
    f: Vec<ConvexFn>,
    g: Vec<ConvexFn>,
    points: Vec<Vec<f64>>,
    dim: usize,
    rng: ChaCha8Rng,
}

fn case(seed: u64) -> Case {
    let mut rng = rng(seed);
    let dim = rng.gen_range(1..=3);
    let poly = rng.gen_bool(0.5);
    let tree = random_tree(&mut rng, 2, 2);
    let f = tree.nodes().map(|_| random_fn(&mut rng, dim, poly)).collect();
    let g = tree.nodes().map(|_| random_fn(&mut rng, dim, poly)).collect();
    let points = (0..6).map(|_| random_vec(&mut rng, dim, 3.0)).collect();
    Case { tree, f, g, points, dim, rng }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn additivity(seed in any::<u64>()) {
        let c = case(seed);
        let root = c.tree.root();
        let sum: Vec<ConvexFn> = c.f.iter().zip(&c.g).map(|(a, b)| a.add(b).unwrap()).collect();
        let (ef, eg, es) = (expect_at(&c.tree, root, &c.f), expect_at(&c.tree, root, &c.g), expect_at(&c.tree, root, &sum));
        for x in &c.points {
            let lhs = es.eval(x).unwrap();
            let rhs = ef.eval(x).unwrap() + eg.eval(x).unwrap();
            prop_assert!(close(lhs, rhs, TOL), "{lhs} vs {rhs}");
            prop_assert!(close(ef.eval(x).unwrap(), direct(&c.tree, root, &c.f, x), TOL));
        }
    }

    #[test]
    fn monotonicity(seed in any::<u64>()) {
        let mut c = case(seed);
        let root = c.tree.root();
        // g_i := f_i + (nonnegative) -> E g >= E f pointwise
        let bump = c.rng.gen_range(0.0..1.0);
        let bigger: Vec<ConvexFn> = c.f.iter().map(|f| f.add_constant(bump)).collect();
        let (ef, eg) = (expect_at(&c.tree, root, &c.f), expect_at(&c.tree, root, &bigger));
        // f_i and its affine minorant
        let low: Vec<ConvexFn> = c.f.iter().map(|f| minorant(&mut c.rng, f)).collect();
        let el = expect_at(&c.tree, root, &low);
        for x in &c.points {
            let (a, b, l) = (ef.eval(x).unwrap(), eg.eval(x).unwrap(), el.eval(x).unwrap());
            prop_assert!(a <= b + TOL * (1.0 + a.abs()));
            prop_assert!(l <= a + TOL * (1.0 + a.abs()), "{l} > {a}");
        }
    }

    #[test]
    fn tower(seed in any::<u64>()) {
        let c = case(seed);
        let tree = &c.tree;
        let mut inner = c.f.clone();
        for id in tree.stage_nodes(1) {
            inner[id.0] = expect_at(tree, id, &c.f);
        }
        let nested = expect_at(tree, tree.root(), &inner);
        let leaves: Vec<(f64, &ConvexFn)> = tree.leaves().map(|l| (tree.uncond_prob(l), &c.f[l.0])).collect();
        let flat = weighted_sum(&leaves).unwrap();
        for x in &c.points {
            let (a, b) = (nested.eval(x).unwrap(), flat.eval(x).unwrap());
            prop_assert!(close(a, b, TOL), "{a} vs {b}");
        }
    }

    #[test]
    fn monotone_convergence(seed in any::<u64>()) {
        let mut c = case(seed);
        let root = c.tree.root();
        let low: Vec<ConvexFn> = c.f.iter().map(|f| minorant(&mut c.rng, f)).collect();
        // h_k = (1 - 2^-k) f + 2^-k a increases to f
        let seq = |k: i32| -> Vec<ConvexFn> {
            let w = 0.5f64.powi(k);
            c.f.iter().zip(&low).map(|(f, a)| f.scale(1.0 - w).unwrap().add(&a.scale(w).unwrap()).unwrap()).collect()
        };
        let ef = expect_at(&c.tree, root, &c.f);
        for x in &c.points {
            let mut prev = f64::NEG_INFINITY;
            for k in [0, 1, 2, 4, 8, 16] {
                let v = expect_at(&c.tree, root, &seq(k)).eval(x).unwrap();
                prop_assert!(v >= prev || v >= prev - TOL * (1.0 + v.abs()), "{v} < {prev}");
                prev = v;
            }
            let limit = expect_at(&c.tree, root, &seq(60)).eval(x).unwrap();
            prop_assert!(close(limit, ef.eval(x).unwrap(), TOL));
        }
    }

    #[test]
    fn recession_commutes(seed in any::<u64>()) {
        let c = case(seed);
        let tree = &c.tree;
        let root = tree.root();
        let lhs = expect_at(tree, root, &c.f).recession();
        let recs: Vec<ConvexFn> = c.f.iter().map(ConvexFn::recession).collect();
        let rhs = expect_at(tree, root, &recs);
        let mut dirs = c.points.clone();
        dirs.push(vec![0.0; c.dim]);
        for d in &dirs {
            let (a, b) = (lhs.eval(d).unwrap(), rhs.eval(d).unwrap());
            prop_assert!(close(a, b, TOL), "{a} vs {b}");
        }
    }

    #[test]
    fn perp_lemma(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let horizon = rng.gen_range(1..=3);
        let tree = random_tree(&mut rng, horizon, 3);
        let dim = rng.gen_range(1..=3);
        let mut parts = Vec::new();
        for t in 0..=horizon {
            let s = rng.gen_range(t..=horizon);
            let raw = AdaptedProcess::at_stage(&tree, s, |_| random_vec(&mut rng, dim, 5.0));
            let mean = |id: NodeId| {
                let anc = tree.ancestor_at(id, t);
                let mut m = vec![0.0; dim];
                for d in tree.descendants_at(anc, s) {
                    let w = tree.uncond_prob(d) / tree.uncond_prob(anc);
                    for (a, v) in m.iter_mut().zip(&raw[d]) {
                        *a += w * v;
                    }
                }
                m
            };
            parts.push(raw.map(|id, v| v.iter().zip(mean(id)).map(|(a, b)| a - b).collect()));
        }
        let v = ShadowPrice { parts };
        prop_assert!(perp_check(&tree, &v));
        let x = AdaptedProcess::full(&tree, |_| random_vec(&mut rng, dim, 10.0));
        prop_assert!(pairing(&tree, &x, &v).abs() <= TOL);
    }
}

// ---- exact rational path ----

fn rational(rng: &mut ChaCha8Rng) -> BigRational {
    ratio(rng.gen_range(-20..=20), rng.gen_range(1..=9))
}

fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<BigRational> {
    (0..n).map(|_| rational(rng)).collect()
}

/// Random tree with exact rational branch probabilities.
fn exact_tree(rng: &mut ChaCha8Rng, horizon: usize) -> ScenarioTree {
    let mut nodes = vec![];
    let mut root = RawNode::new("0", None, 1.0, 0);
    root.exact_prob = Some(ratio(1, 1));
    nodes.push(root);
    let mut layer = vec!["0".to_string()];
    for t in 1..=horizon {
        let mut next = vec![];
        for p in &layer {
            let k = rng.gen_range(1..=3);
            let w: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=7)).collect();
            let total: i64 = w.iter().sum();
            for wi in w {
                let id = format!("{}", nodes.len());
                let mut n = RawNode::new(id.clone(), Some(p), wi as f64 / total as f64, t);
                n.exact_prob = Some(ratio(wi, total));
                nodes.push(n);
                next.push(id);
            }
        }
        layer = next;
    }
    stochdp_core::tree::validate_tree(&nodes).unwrap()
}

fn exact_poly(rng: &mut ChaCha8Rng, n: usize) -> ExactPoly<BigRational> {
    let pieces = (0..rng.gen_range(1..=3)).map(|_| (rvec(rng, n), rational(rng))).collect();
    let rows = if rng.gen_bool(0.5) { vec![(rvec(rng, n), ratio(rng.gen_range(1..=5), 1))] } else { vec![] };
    ExactPoly { pieces, rows }
}

fn exact_quad(rng: &mut ChaCha8Rng, n: usize) -> ExactQuad<BigRational> {
    // Q = F F' with integer-ish F keeps it PSD
    let f: Vec<Vec<BigRational>> = (0..n).map(|_| rvec(rng, n)).collect();
    let q = (0..n)
        .map(|i| (0..n).map(|j| (0..n).fold(ratio(0, 1), |acc, k| acc + &f[i][k] * &f[j][k])).collect())
        .collect();
    ExactQuad { q, lin: rvec(rng, n), c: rational(rng) }
}

fn kids<'a, T>(tree: &ScenarioTree, id: NodeId, f: &'a [T]) -> Vec<(BigRational, &'a T)> {
    tree.children(id).iter().map(|&c| (tree.exact_prob(c), &f[c.0])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn exact_laws_polyhedral(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.gen_range(1..=2);
        let tree = exact_tree(&mut rng, 2);
        let f: Vec<_> = tree.nodes().map(|_| exact_poly(&mut rng, n)).collect();
        let g: Vec<_> = tree.nodes().map(|_| exact_poly(&mut rng, n)).collect();
        let root = tree.root();
        let x = rvec(&mut rng, n);
        // additivity
        let sum: Vec<_> = f.iter().zip(&g).map(|(a, b)| a.add(b)).collect();
        let lhs = ExactPoly::cond_expect(&kids(&tree, root, &sum)).eval(&x);
        let rhs = ExactPoly::cond_expect(&kids(&tree, root, &f)).eval(&x).add(ExactPoly::cond_expect(&kids(&tree, root, &g)).eval(&x));
        prop_assert_eq!(lhs, rhs);
        // monotonicity: adding a nonnegative constant piecewise
        let bump = ratio(rng.gen_range(0..5), 3);
        let up: Vec<_> = f.iter().map(|p| ExactPoly {
            pieces: p.pieces.iter().map(|(a, c)| (a.clone(), c + &bump)).collect(),
            rows: p.rows.clone(),
        }).collect();
        prop_assert!(ExactPoly::cond_expect(&kids(&tree, root, &f)).eval(&x).le(&ExactPoly::cond_expect(&kids(&tree, root, &up)).eval(&x)));
        // tower
        let mut inner = f.clone();
        for id in tree.stage_nodes(1) {
            inner[id.0] = ExactPoly::cond_expect(&kids(&tree, id, &f));
        }
        let nested = ExactPoly::cond_expect(&kids(&tree, root, &inner)).eval(&x);
        let flat = tree.leaves().fold(Ext::Finite(ratio(0, 1)), |acc, l| {
            let w = tree.path(l).iter().skip(1).fold(ratio(1, 1), |p, &a| p * tree.exact_prob(a));
            acc.add(f[l.0].eval(&x).scale(&w))
        });
        prop_assert_eq!(nested, flat);
        // recession commutation
        let recs: Vec<_> = f.iter().map(ExactPoly::recession).collect();
        let lhs = ExactPoly::cond_expect(&kids(&tree, root, &f)).recession().eval(&x);
        let rhs = ExactPoly::cond_expect(&kids(&tree, root, &recs)).eval(&x);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn exact_laws_quadratic(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.gen_range(1..=2);
        let tree = exact_tree(&mut rng, 2);
        let f: Vec<_> = tree.nodes().map(|_| exact_quad(&mut rng, n)).collect();
        let g: Vec<_> = tree.nodes().map(|_| exact_quad(&mut rng, n)).collect();
        let root = tree.root();
        let x = rvec(&mut rng, n);
        let sum: Vec<_> = f.iter().zip(&g).map(|(a, b)| a.add(b)).collect();
        let ef = ExactQuad::cond_expect(&kids(&tree, root, &f));
        prop_assert_eq!(
            ExactQuad::cond_expect(&kids(&tree, root, &sum)).eval(&x),
            ef.eval(&x) + ExactQuad::cond_expect(&kids(&tree, root, &g)).eval(&x)
        );
        let mut inner = f.clone();
        for id in tree.stage_nodes(1) {
            inner[id.0] = ExactQuad::cond_expect(&kids(&tree, id, &f));
        }
        let flat = tree.leaves().fold(ratio(0, 1), |acc, l| {
            let w = tree.path(l).iter().skip(1).fold(ratio(1, 1), |p, &a| p * tree.exact_prob(a));
            acc + w * f[l.0].eval(&x)
        });
        prop_assert_eq!(ExactQuad::cond_expect(&kids(&tree, root, &inner)).eval(&x), flat);
        // recession: the expectation is finite along d iff every child is
        let lhs = ef.recession_eval(&x);
        let rhs = kids(&tree, root, &f).iter().fold(Ext::Finite(ratio(0, 1)), |acc, (p, q)| acc.add(q.recession_eval(&x).scale(p)));
        prop_assert_eq!(lhs, rhs);
    }
}
