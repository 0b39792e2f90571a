//! Finite filtered probability spaces: scenario trees, adapted processes,
//! scalar conditional expectations and orthogonality to adapted strategies.
//!
//! Nodes are stored in breadth-first order, so the nodes of any stage range
//! occupy a contiguous index interval. Probabilities are kept per branch
//! (conditional on the parent); unconditional ones are products along the path.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, Range};

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Index of a node inside a validated tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Unvalidated node record as read from a tree file.
#[derive(Debug, Clone)]
pub struct RawNode {
    pub id: String,
    pub parent: Option<String>,
    pub prob: f64,
    pub stage: usize,
    /// Exact branch probability, when the source gave one.
    pub exact_prob: Option<BigRational>,
}

impl RawNode {
    pub fn new(id: impl Into<String>, parent: Option<&str>, prob: f64, stage: usize) -> Self {
        RawNode { id: id.into(), parent: parent.map(String::from), prob, stage, exact_prob: None }
    }
}

pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ScenarioTree {
    labels: Vec<String>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    stage: Vec<usize>,
    prob: Vec<f64>,
    exact: Option<Vec<BigRational>>,
    uncond: Vec<f64>,
    stage_start: Vec<usize>,
    /// position in the caller's node list
    source_index: Vec<usize>,
}

/// Validate raw node records and build the tree.
pub fn validate_tree(raw: &[RawNode]) -> Result<ScenarioTree> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, n) in raw.iter().enumerate() {
        if index.insert(n.id.as_str(), i).is_some() {
            return Err(Error::DuplicateId { node: n.id.clone() });
        }
    }
    let roots: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].parent.is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::RootCount { found: roots.len() });
    }
    let root = roots[0];
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); raw.len()];
    for (i, n) in raw.iter().enumerate() {
        if !(n.prob > 0.0 && n.prob <= 1.0 + MASS_TOL) || !n.prob.is_finite() {
            return Err(Error::BadProbability { node: n.id.clone(), prob: n.prob });
        }
        if let Some(p) = &n.parent {
            let Some(&pi) = index.get(p.as_str()) else {
                return Err(Error::OrphanNode { node: n.id.clone(), parent: p.clone() });
            };
            if n.stage != raw[pi].stage + 1 {
                return Err(Error::StageGap {
                    node: n.id.clone(),
                    stage: n.stage,
                    parent_stage: raw[pi].stage,
                });
            }
            kids[pi].push(i);
        }
    }
    let r = &raw[root];
    if r.stage != 0 {
        return Err(Error::StageGap { node: r.id.clone(), stage: r.stage, parent_stage: 0 });
    }
    if (r.prob - 1.0).abs() > MASS_TOL {
        return Err(Error::ProbabilityMass { node: r.id.clone(), sum: r.prob });
    }
    // breadth-first order; stages are contiguous because child stage = parent + 1
    let mut order = vec![root];
    let mut head = 0;
    while head < order.len() {
        let i = order[head];
        head += 1;
        order.extend_from_slice(&kids[i]);
    }
    if order.len() != raw.len() {
        // nodes on a parent cycle never reach the root
        let seen: alloc::collections::BTreeSet<usize> = order.iter().copied().collect();
        let lost = (0..raw.len()).find(|i| !seen.contains(i)).unwrap();
        return Err(Error::OrphanNode {
            node: raw[lost].id.clone(),
            parent: raw[lost].parent.clone().unwrap_or_default(),
        });
    }
    let horizon = raw.iter().map(|n| n.stage).max().unwrap_or(0);
    let exact_given = raw.iter().all(|n| n.exact_prob.is_some());
    for &i in &order {
        if kids[i].is_empty() {
            if raw[i].stage != horizon {
                return Err(Error::ShortLeaf { node: raw[i].id.clone(), stage: raw[i].stage, horizon });
            }
            continue;
        }
        let sum: f64 = kids[i].iter().map(|&c| raw[c].prob).sum();
        let exact_ok = !exact_given || {
            let s: BigRational = kids[i]
                .iter()
                .map(|&c| raw[c].exact_prob.clone().unwrap())
                .fold(BigRational::zero(), |a, b| a + b);
            s.is_one()
        };
        if (sum - 1.0).abs() > MASS_TOL || !exact_ok {
            return Err(Error::ProbabilityMass { node: raw[i].id.clone(), sum });
        }
    }
    let mut pos = vec![0usize; raw.len()];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    let n = order.len();
    let labels = order.iter().map(|&i| raw[i].id.clone()).collect();
    let parent = order
        .iter()
        .map(|&i| raw[i].parent.as_ref().map(|p| NodeId(pos[index[p.as_str()]])))
        .collect();
    let children = order.iter().map(|&i| kids[i].iter().map(|&c| NodeId(pos[c])).collect()).collect();
    let stage: Vec<usize> = order.iter().map(|&i| raw[i].stage).collect();
    let prob: Vec<f64> = order.iter().map(|&i| raw[i].prob).collect();
    let exact = if exact_given {
        Some(order.iter().map(|&i| raw[i].exact_prob.clone().unwrap()).collect())
    } else {
        None
    };
    let mut tree = ScenarioTree {
        labels,
        parent,
        children,
        stage,
        prob,
        exact,
        uncond: vec![0.0; n],
        stage_start: Vec::new(),
        source_index: order,
    };
    tree.finish(horizon);
    Ok(tree)
}

impl ScenarioTree {
    fn finish(&mut self, horizon: usize) {
        let n = self.labels.len();
        for i in 0..n {
            self.uncond[i] = match self.parent[i] {
                None => 1.0,
                Some(p) => self.uncond[p.0] * self.prob[i],
            };
        }
        let mut starts = vec![0; horizon + 2];
        for t in 0..=horizon + 1 {
            starts[t] = self.stage.iter().position(|&s| s >= t).unwrap_or(n);
        }
        self.stage_start = starts;
    }

    /// Build from a parent list given in breadth-first order (ids are the indices).
    pub fn from_parents(parents: &[Option<usize>], probs: &[f64]) -> Result<ScenarioTree> {
        let mut stages = vec![0usize; parents.len()];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                stages[i] = stages[*p] + 1;
            }
        }
        let raw: Vec<RawNode> = parents
            .iter()
            .enumerate()
            .map(|(i, p)| RawNode {
                id: i.to_string(),
                parent: p.map(|p| p.to_string()),
                prob: probs[i],
                stage: stages[i],
                exact_prob: None,
            })
            .collect();
        validate_tree(&raw)
    }

    /// Tree where every stage-`t` node has `branch_probs[t].len()` children with the given probabilities.
    pub fn stagewise(branch_probs: &[Vec<f64>]) -> Result<ScenarioTree> {
        let mut parents = vec![None];
        let mut probs = vec![1.0];
        let mut layer = vec![0usize];
        for bp in branch_probs {
            let mut next = Vec::new();
            for &p in &layer {
                for &q in bp {
                    parents.push(Some(p));
                    probs.push(q);
                    next.push(parents.len() - 1);
                }
            }
            layer = next;
        }
        ScenarioTree::from_parents(&parents, &probs)
    }

    /// Equiprobable `branching`-ary tree of the given horizon.
    pub fn uniform(horizon: usize, branching: usize) -> ScenarioTree {
        let p = 1.0 / branching as f64;
        ScenarioTree::stagewise(&vec![vec![p; branching]; horizon]).expect("uniform tree is valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn horizon(&self) -> usize {
        self.stage_start.len() - 2
    }

    pub fn nodes(&self) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator {
        (0..self.len()).map(NodeId)
    }

    pub fn stage_range(&self, t: usize) -> Range<usize> {
        self.stage_start[t]..self.stage_start[t + 1]
    }

    pub fn stage_nodes(&self, t: usize) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator {
        self.stage_range(t).map(NodeId)
    }

    pub fn leaves(&self) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator {
        self.stage_nodes(self.horizon())
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id.0]
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.labels.iter().position(|l| l == label).map(NodeId)
    }

    /// Position of the node in the list passed to [`validate_tree`].
    pub fn source_index(&self, id: NodeId) -> usize {
        self.source_index[id.0]
    }

    pub fn stage(&self, id: NodeId) -> usize {
        self.stage[id.0]
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id.0]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.0]
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.children[id.0].is_empty()
    }

    /// Conditional branch probability.
    pub fn prob(&self, id: NodeId) -> f64 {
        self.prob[id.0]
    }

    /// Unconditional node probability.
    pub fn uncond_prob(&self, id: NodeId) -> f64 {
        self.uncond[id.0]
    }

    pub fn has_exact_probs(&self) -> bool {
        self.exact.is_some()
    }

    /// Exact branch probability (the float's binary expansion when none was given).
    pub fn exact_prob(&self, id: NodeId) -> BigRational {
        match &self.exact {
            Some(e) => e[id.0].clone(),
            None => <BigRational as Scalar>::from_f64(self.prob[id.0]),
        }
    }

    /// Root-to-node path, root first.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut p = vec![id];
        let mut cur = id;
        while let Some(up) = self.parent(cur) {
            p.push(up);
            cur = up;
        }
        p.reverse();
        p
    }

    pub fn ancestor_at(&self, id: NodeId, stage: usize) -> NodeId {
        let mut cur = id;
        while self.stage(cur) > stage {
            cur = self.parent(cur).expect("stage above root");
        }
        cur
    }

    /// Stage-`s` descendants of `id`.
    pub fn descendants_at(&self, id: NodeId, s: usize) -> Vec<NodeId> {
        let mut layer = vec![id];
        for _ in self.stage(id)..s {
            layer = layer.iter().flat_map(|&n| self.children(n).iter().copied()).collect();
        }
        layer
    }
}

/// Node-indexed data on a contiguous stage range.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess<V> {
    first: usize,
    last: usize,
    offset: usize,
    values: Vec<V>,
}

impl<V> AdaptedProcess<V> {
    pub fn from_fn(tree: &ScenarioTree, first: usize, last: usize, mut f: impl FnMut(NodeId) -> V) -> Self {
        let lo = tree.stage_range(first).start;
        let hi = tree.stage_range(last).end;
        AdaptedProcess { first, last, offset: lo, values: (lo..hi).map(|i| f(NodeId(i))).collect() }
    }

    /// Defined on every stage `0..=T`.
    pub fn full(tree: &ScenarioTree, f: impl FnMut(NodeId) -> V) -> Self {
        Self::from_fn(tree, 0, tree.horizon(), f)
    }

    /// Defined on stage `s` only.
    pub fn at_stage(tree: &ScenarioTree, s: usize, f: impl FnMut(NodeId) -> V) -> Self {
        Self::from_fn(tree, s, s, f)
    }

    pub fn first_stage(&self) -> usize {
        self.first
    }

    pub fn last_stage(&self) -> usize {
        self.last
    }

    pub fn get(&self, id: NodeId) -> Option<&V> {
        id.0.checked_sub(self.offset).and_then(|k| self.values.get(k))
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut V> {
        id.0.checked_sub(self.offset).and_then(|k| self.values.get_mut(k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &V)> {
        self.values.iter().enumerate().map(move |(k, v)| (NodeId(k + self.offset), v))
    }

    pub fn map<W>(&self, mut f: impl FnMut(NodeId, &V) -> W) -> AdaptedProcess<W> {
        AdaptedProcess {
            first: self.first,
            last: self.last,
            offset: self.offset,
            values: self.iter().map(|(id, v)| f(id, v)).collect(),
        }
    }
}

impl<V> Index<NodeId> for AdaptedProcess<V> {
    type Output = V;
    fn index(&self, id: NodeId) -> &V {
        self.get(id).expect("node outside the process's stage range")
    }
}

/// `E_t` of the stage-`s` values of `p`, as a process on stage `t`.
pub fn cond_expect_scalar<S: Scalar>(
    tree: &ScenarioTree,
    p: &AdaptedProcess<S>,
    s: usize,
    t: usize,
) -> Result<AdaptedProcess<S>> {
    if t > s {
        return Err(Error::StageOrder { from: s, to: t });
    }
    if s < p.first_stage() || s > p.last_stage() {
        return Err(Error::InvalidInput(alloc::format!("process is not defined at stage {s}")));
    }
    let mut layer = AdaptedProcess::at_stage(tree, s, |id| p[id].clone());
    for u in (t..s).rev() {
        layer = AdaptedProcess::at_stage(tree, u, |id| {
            tree.children(id)
                .iter()
                .fold(S::zero(), |acc, &c| acc + S::branch_prob(tree, c) * layer[c].clone())
        });
    }
    Ok(layer)
}

/// Componentwise `E_t` of vector values held at stage `s`.
pub fn cond_expect_vec(
    tree: &ScenarioTree,
    p: &AdaptedProcess<Vec<f64>>,
    s: usize,
    t: usize,
) -> Result<AdaptedProcess<Vec<f64>>> {
    if t > s {
        return Err(Error::StageOrder { from: s, to: t });
    }
    let mut layer = AdaptedProcess::at_stage(tree, s, |id| p[id].clone());
    for u in (t..s).rev() {
        layer = AdaptedProcess::at_stage(tree, u, |id| {
            let kids = tree.children(id);
            let mut acc = vec![0.0; layer[kids[0]].len()];
            for &c in kids {
                for (a, v) in acc.iter_mut().zip(&layer[c]) {
                    *a += tree.prob(c) * v;
                }
            }
            acc
        });
    }
    Ok(layer)
}

/// A process `v = (v_0, ..., v_T)` where `v_t` may be measurable at a later stage
/// (stored on the nodes of `parts[t].first_stage() >= t`).
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPrice {
    pub parts: Vec<AdaptedProcess<Vec<f64>>>,
}

impl ShadowPrice {
    pub fn zero(tree: &ScenarioTree, dims: &[usize]) -> Self {
        ShadowPrice {
            parts: (0..=tree.horizon())
                .map(|t| AdaptedProcess::at_stage(tree, t, |_| vec![0.0; dims[t]]))
                .collect(),
        }
    }

    /// Stage at which `v_t` lives.
    pub fn stage_of(&self, t: usize) -> usize {
        self.parts[t].first_stage()
    }

    /// `E_t[v_t]` at the stage-`t` node `id`.
    pub fn conditional_mean(&self, tree: &ScenarioTree, t: usize, id: NodeId) -> Vec<f64> {
        let s = self.stage_of(t);
        let desc = tree.descendants_at(id, s);
        let dim = self.parts[t][desc[0]].len();
        let mut acc = vec![0.0; dim];
        let base = tree.uncond_prob(id);
        for d in desc {
            let w = tree.uncond_prob(d) / base;
            for (a, v) in acc.iter_mut().zip(&self.parts[t][d]) {
                *a += w * v;
            }
        }
        acc
    }
}

/// True iff `E_t[v_t] = 0` at every stage-`t` node (within `1e-12` relative to the data scale).
pub fn perp_check(tree: &ScenarioTree, v: &ShadowPrice) -> bool {
    perp_violation(tree, v).is_none()
}

/// First `(stage, node)` where `E_t[v_t]` is not zero.
pub fn perp_violation(tree: &ScenarioTree, v: &ShadowPrice) -> Option<(usize, NodeId)> {
    for (t, part) in v.parts.iter().enumerate() {
        let scale = part.iter().flat_map(|(_, x)| x.iter()).fold(1.0f64, |m, x| m.max(x.abs()));
        for id in tree.stage_nodes(t) {
            let m = v.conditional_mean(tree, t, id);
            if m.iter().any(|x| x.abs() > MASS_TOL * scale) {
                return Some((t, id));
            }
        }
        let _ = part;
    }
    None
}

/// `E[sum_t x_t . v_t]` for adapted `x` (each `x_t` on stage `t`).
pub fn pairing(tree: &ScenarioTree, x: &AdaptedProcess<Vec<f64>>, v: &ShadowPrice) -> f64 {
    let mut total = 0.0;
    for (t, part) in v.parts.iter().enumerate() {
        for (id, val) in part.iter() {
            let xt = &x[tree.ancestor_at(id, t)];
            total += tree.uncond_prob(id) * crate::num::dot(xt, val);
        }
    }
    total
}

/// `v_t := s_{t+1} - s_t` held at stage `t+1` (and `v_T := 0`).
pub fn martingale_increments(tree: &ScenarioTree, s: &AdaptedProcess<Vec<f64>>) -> ShadowPrice {
    let horizon = tree.horizon();
    let mut parts = Vec::with_capacity(horizon + 1);
    for t in 0..horizon {
        parts.push(AdaptedProcess::at_stage(tree, t + 1, |id| {
            let p = tree.parent(id).unwrap();
            s[id].iter().zip(&s[p]).map(|(a, b)| a - b).collect()
        }));
    }
    let dim = s[tree.root()].len();
    parts.push(AdaptedProcess::at_stage(tree, horizon, |_| vec![0.0; dim]));
    ShadowPrice { parts }
}

/// Conditional law of the future reward path seen from a node:
/// sorted `(path values, probability)` pairs with equal paths merged.
fn future_law(tree: &ScenarioTree, r: &AdaptedProcess<f64>, id: NodeId) -> Vec<(Vec<f64>, f64)> {
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    let base = tree.uncond_prob(id);
    for leaf in tree.descendants_at(id, tree.horizon()) {
        let path: Vec<f64> = tree.path(leaf)[tree.stage(id) + 1..].iter().map(|&n| r[n]).collect();
        out.push((path, tree.uncond_prob(leaf) / base));
    }
    out.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    let mut merged: Vec<(Vec<f64>, f64)> = Vec::new();
    for (p, w) in out {
        match merged.last_mut() {
            Some((q, acc)) if same_path(q, &p) => *acc += w,
            _ => merged.push((p, w)),
        }
    }
    merged
}

fn lex_cmp(a: &[f64], b: &[f64]) -> core::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > MASS_TOL {
            return x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal);
        }
    }
    a.len().cmp(&b.len())
}

fn same_path(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= MASS_TOL)
}

/// Two same-stage nodes with equal reward but different future reward laws.
pub fn markov_witness(tree: &ScenarioTree, r: &AdaptedProcess<f64>) -> Option<(usize, NodeId, NodeId)> {
    for t in 0..tree.horizon() {
        let nodes: Vec<NodeId> = tree.stage_nodes(t).collect();
        let laws: Vec<_> = nodes.iter().map(|&n| future_law(tree, r, n)).collect();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if (r[nodes[i]] - r[nodes[j]]).abs() > MASS_TOL {
                    continue;
                }
                let (a, b) = (&laws[i], &laws[j]);
                let equal = a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| same_path(&x.0, &y.0) && (x.1 - y.1).abs() <= MASS_TOL);
                if !equal {
                    return Some((t, nodes[i], nodes[j]));
                }
            }
        }
    }
    None
}

pub fn is_markov(tree: &ScenarioTree, r: &AdaptedProcess<f64>) -> bool {
    markov_witness(tree, r).is_none()
}

/// Partition of the stage-`t` nodes into classes of equal `key` (within `tol`).
pub fn partition_by(tree: &ScenarioTree, t: usize, key: impl Fn(NodeId) -> Vec<f64>, tol: f64) -> Vec<Vec<NodeId>> {
    let mut cells: Vec<(Vec<f64>, Vec<NodeId>)> = Vec::new();
    for id in tree.stage_nodes(t) {
        let k = key(id);
        match cells
            .iter_mut()
            .find(|(c, _)| c.len() == k.len() && c.iter().zip(&k).all(|(a, b)| (a - b).abs() <= tol))
        {
            Some((_, members)) => members.push(id),
            None => cells.push((k, vec![id])),
        }
    }
    cells.into_iter().map(|(_, m)| m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::ratio;

    fn binary() -> ScenarioTree {
        ScenarioTree::stagewise(&[vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn minimal_binary_tree_is_valid() {
        let t = binary();
        assert_eq!(t.horizon(), 1);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn validation_errors() {
        let bad_mass = [
            RawNode::new("r", None, 1.0, 0),
            RawNode::new("a", Some("r"), 0.5, 1),
            RawNode::new("b", Some("r"), 0.6, 1),
        ];
        assert!(matches!(validate_tree(&bad_mass), Err(Error::ProbabilityMass { node, .. }) if node == "r"));

        let gap = [
            RawNode::new("r", None, 1.0, 0),
            RawNode::new("a", Some("r"), 1.0, 1),
            RawNode::new("b", Some("a"), 1.0, 3),
        ];
        assert!(matches!(validate_tree(&gap), Err(Error::StageGap { .. })));

        let orphan = [RawNode::new("r", None, 1.0, 0), RawNode::new("a", Some("zz"), 1.0, 1)];
        assert!(matches!(validate_tree(&orphan), Err(Error::OrphanNode { .. })));
    }

    #[test]
    fn cond_expect_examples() {
        let t = binary();
        let p = AdaptedProcess::at_stage(&t, 1, |id| if id.0 == 1 { 2.0 } else { 4.0 });
        let e = cond_expect_scalar(&t, &p, 1, 0).unwrap();
        assert_eq!(e[t.root()], 3.0);
        assert!(matches!(cond_expect_scalar(&t, &p, 0, 1), Err(Error::StageOrder { .. })));

        let chain = ScenarioTree::stagewise(&[vec![1.0], vec![1.0]]).unwrap();
        let p = AdaptedProcess::at_stage(&chain, 2, |_| 7.25);
        for s in 0..=2 {
            let e = cond_expect_scalar(&chain, &p, 2, s).unwrap();
            assert!(e.iter().all(|(_, v)| *v == 7.25));
        }
    }

    #[test]
    fn leaf_summation_oracle() {
        let t = ScenarioTree::stagewise(&[vec![0.3, 0.7], vec![0.25, 0.25, 0.5]]).unwrap();
        let p = AdaptedProcess::at_stage(&t, 2, |id| (id.0 as f64).sin());
        let e = cond_expect_scalar(&t, &p, 2, 0).unwrap();
        let direct: f64 = t.leaves().map(|l| t.uncond_prob(l) * p[l]).sum();
        assert!((e[t.root()] - direct).abs() < 1e-14);
    }

    #[test]
    fn exact_tower_on_rationals() {
        let raw = [
            RawNode { exact_prob: Some(ratio(1, 1)), ..RawNode::new("r", None, 1.0, 0) },
            RawNode { exact_prob: Some(ratio(1, 3)), ..RawNode::new("a", Some("r"), 1.0 / 3.0, 1) },
            RawNode { exact_prob: Some(ratio(2, 3)), ..RawNode::new("b", Some("r"), 2.0 / 3.0, 1) },
            RawNode { exact_prob: Some(ratio(1, 7)), ..RawNode::new("aa", Some("a"), 1.0 / 7.0, 2) },
            RawNode { exact_prob: Some(ratio(6, 7)), ..RawNode::new("ab", Some("a"), 6.0 / 7.0, 2) },
            RawNode { exact_prob: Some(ratio(1, 1)), ..RawNode::new("ba", Some("b"), 1.0, 2) },
        ];
        let t = validate_tree(&raw).unwrap();
        let p = AdaptedProcess::at_stage(&t, 2, |id| ratio(id.0 as i64 * 5 - 3, 11));
        let direct = cond_expect_scalar(&t, &p, 2, 0).unwrap();
        let mid = cond_expect_scalar(&t, &p, 2, 1).unwrap();
        let mid_full = AdaptedProcess::from_fn(&t, 1, 1, |id| mid[id].clone());
        let two_step = cond_expect_scalar(&t, &mid_full, 1, 0).unwrap();
        assert_eq!(direct[t.root()], two_step[t.root()]);
    }

    #[test]
    fn martingale_increment_examples() {
        let t = binary();
        let flat = AdaptedProcess::full(&t, |_| vec![1.0]);
        let v = martingale_increments(&t, &flat);
        assert!(v.parts.iter().all(|p| p.iter().all(|(_, x)| x[0] == 0.0)));

        let binom = AdaptedProcess::full(&t, |id| vec![[1.0, 0.5, 1.5][id.0]]);
        assert!(perp_check(&t, &martingale_increments(&t, &binom)));

        let drift = AdaptedProcess::full(&t, |id| vec![[1.0, 1.5, 2.5][id.0]]);
        assert!(!perp_check(&t, &martingale_increments(&t, &drift)));

        let mut ones = ShadowPrice::zero(&t, &[1, 1]);
        ones.parts[0] = AdaptedProcess::at_stage(&t, 0, |_| vec![1.0]);
        assert!(!perp_check(&t, &ones));
        assert!(perp_check(&t, &ShadowPrice::zero(&t, &[1, 1])));
    }

    #[test]
    fn markov_examples() {
        // i.i.d. rewards replicated on every stage-t node
        let t = ScenarioTree::uniform(3, 2);
        let iid = AdaptedProcess::full(&t, |id| if id.0 == 0 { 0.0 } else { (id.0 % 2) as f64 });
        assert!(is_markov(&t, &iid));
        // path dependence: R_1 equal on both nodes but R_2 laws differ
        let path = AdaptedProcess::full(&t, |id| match t.stage(id) {
            2 => id.0 as f64,
            _ => 1.0,
        });
        let w = markov_witness(&t, &path).unwrap();
        assert_eq!(w.0, 1);
    }

    #[test]
    fn product_tree_conditional_expectation_is_cell_measurable() {
        // stage-2 shock independent of stage-1 information given nothing: E_1 of f(w_2) is constant
        let t = ScenarioTree::stagewise(&[vec![0.4, 0.6], vec![0.2, 0.3, 0.5]]).unwrap();
        let w = AdaptedProcess::at_stage(&t, 2, |id| [1.0, -2.0, 0.5][(id.0 - 3) % 3]);
        let e = cond_expect_scalar(&t, &w, 2, 1).unwrap();
        let vals: Vec<f64> = e.iter().map(|(_, v)| *v).collect();
        assert!((vals[0] - vals[1]).abs() < 1e-15);
    }
}
