//! Tree files: a JSON document with a `nodes` array of
//! `{id, parent, prob, stage, data}` records plus an optional `problem` header.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use stochdp_core::convexfn::{ConvexFn, Halfspace, Piece, Polyhedral, Quadratic, Sampled1D};
use stochdp_core::num::{parse_rational, BigRational, Scalar};
use stochdp_core::tree::validate_tree;
use stochdp_core::{NodeId, RawNode, ScenarioTree};

use crate::CliError;

/// What the node data describes; selects how `solve`/`oracle`/`check` read it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `h` terms over the decision history
    General,
    /// `g` stage costs over `(x_{t-1}, x_t)`
    StageAdditive,
    /// `K` over `(x_t, Δx_t)`, or LP data `T, W, b, c, C`
    Lagrange,
    /// `A, B, W, Q, R`
    Control,
    /// reward `R`
    Stopping,
    /// prices `s`, rows `D`, claim `c`
    Hedge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemHeader {
    pub kind: ProblemKind,
    /// decision dimension per stage (general / stage-additive) or the state dimension (lagrange)
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemHeader>,
    /// keep the exact rational branch probabilities
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exact: bool,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub parent: Option<String>,
    pub prob: Prob,
    pub stage: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub data: BTreeMap<String, Entry>,
}

/// A probability: a number, or a string such as `"1/3"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Prob {
    Number(f64),
    Text(String),
}

impl Serialize for Prob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            // 17 significant digits
            Prob::Number(p) => {
                let raw = RawValue::from_string(format!("{p:.16e}")).map_err(serde::ser::Error::custom)?;
                raw.serialize(s)
            }
            Prob::Text(t) => s.serialize_str(t),
        }
    }
}

impl Prob {
    fn value(&self, node: &str) -> Result<(f64, Option<BigRational>), CliError> {
        match self {
            Prob::Number(p) => Ok((*p, None)),
            Prob::Text(t) => {
                let r = parse_rational(t)
                    .ok_or_else(|| CliError::Validation(format!("node {node}: cannot parse probability {t:?}")))?;
                let f = Scalar::to_f64(&r);
                Ok((f, Some(r)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
    Text(String),
    Function(FnRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceRecord {
    pub grad: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRecord {
    pub coef: Vec<f64>,
    pub rhs: f64,
}

/// Tagged `ConvexFn` record; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FnRecord {
    /// `½ x'Qx + lin·x + c` on `{eq_a x = eq_b}`
    Quadratic {
        q: Vec<Vec<f64>>,
        lin: Vec<f64>,
        #[serde(default)]
        c: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        eq_a: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        eq_b: Vec<f64>,
    },
    Polyhedral {
        dim: usize,
        pieces: Vec<PieceRecord>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        domain: Vec<RowRecord>,
    },
    Sampled {
        knots: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        extrapolate: bool,
    },
    Sum {
        terms: Vec<FnRecord>,
    },
}

pub fn matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>, CliError> {
    if let Some(r) = rows.iter().find(|r| r.len() != ncols) {
        return Err(CliError::Validation(format!("matrix row has {} entries, expected {ncols}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl FnRecord {
    pub fn to_convex(&self) -> Result<ConvexFn, CliError> {
        Ok(match self {
            FnRecord::Quadratic { q, lin, c, eq_a, eq_b } => {
                let d = lin.len();
                let mut f = Quadratic::new(matrix(q, d)?, DVector::from_vec(lin.clone()), *c)?;
                if !eq_a.is_empty() {
                    if eq_a.len() != eq_b.len() {
                        return Err(CliError::Validation("eq_a and eq_b lengths differ".into()));
                    }
                    f = f.constrained(&matrix(eq_a, d)?, &DVector::from_vec(eq_b.clone()))?;
                }
                ConvexFn::Quadratic(f)
            }
            FnRecord::Polyhedral { dim, pieces, domain } => ConvexFn::Polyhedral(Polyhedral::new(
                *dim,
                pieces.iter().map(|p| Piece::new(p.grad.clone(), p.offset)).collect(),
                domain.iter().map(|r| Halfspace::new(r.coef.clone(), r.rhs)).collect(),
            )?),
            FnRecord::Sampled { knots, values, extrapolate } => {
                ConvexFn::Sampled1D(Sampled1D::new(knots.clone(), values.clone(), *extrapolate)?)
            }
            FnRecord::Sum { terms } => {
                let mut parts = terms.iter().map(FnRecord::to_convex);
                let first = parts.next().ok_or_else(|| CliError::Validation("empty sum".into()))??;
                parts.try_fold(first, |acc, f| -> Result<ConvexFn, CliError> { Ok(acc.add(&f?)?) })?
            }
        })
    }

    pub fn from_convex(f: &ConvexFn) -> FnRecord {
        match f {
            ConvexFn::Quadratic(q) => FnRecord::Quadratic {
                q: rows_of(&q.q),
                lin: q.lin.iter().copied().collect(),
                c: q.c,
                eq_a: rows_of(&q.domain.a),
                eq_b: q.domain.b.iter().copied().collect(),
            },
            ConvexFn::Polyhedral(p) => FnRecord::Polyhedral {
                dim: p.dim,
                pieces: p.pieces.iter().map(|pc| PieceRecord { grad: pc.grad.clone(), offset: pc.offset }).collect(),
                domain: p.domain.rows.iter().map(|r| RowRecord { coef: r.coef.clone(), rhs: r.rhs }).collect(),
            },
            ConvexFn::Sampled1D(s) => {
                FnRecord::Sampled { knots: s.knots.clone(), values: s.values.clone(), extrapolate: s.extrapolate }
            }
            ConvexFn::Sum(parts) => FnRecord::Sum { terms: parts.iter().map(FnRecord::from_convex).collect() },
        }
    }
}

/// A validated tree with its node data, indexed by [`NodeId`].
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Option<ProblemHeader>,
    pub tree: Arc<ScenarioTree>,
    pub data: Vec<BTreeMap<String, Entry>>,
}

impl TreeFile {
    pub fn parse(text: &str) -> Result<TreeFile, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("tree file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree files serialize")
    }

    pub fn load(&self) -> Result<Instance, CliError> {
        let raw = self
            .nodes
            .iter()
            .map(|n| {
                let (prob, exact) = n.prob.value(&n.id)?;
                let mut r = RawNode::new(n.id.clone(), n.parent.as_deref(), prob, n.stage);
                if self.exact {
                    r.exact_prob = Some(exact.unwrap_or_else(|| {
                        <BigRational as Scalar>::from_f64(prob)
                    }));
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let tree = validate_tree(&raw)?;
        let mut data = vec![BTreeMap::new(); tree.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            let id = tree.find(&n.id).expect("validated node");
            debug_assert_eq!(tree.source_index(id), i);
            data[id.0] = n.data.clone();
        }
        Ok(Instance { problem: self.problem.clone(), tree: Arc::new(tree), data })
    }

    /// Serialize a tree with per-node data (probabilities as numbers).
    pub fn from_tree(tree: &ScenarioTree, problem: Option<ProblemHeader>, data: impl Fn(NodeId) -> BTreeMap<String, Entry>) -> TreeFile {
        let nodes = tree
            .nodes()
            .map(|id| NodeRecord {
                id: tree.label(id).to_string(),
                parent: tree.parent(id).map(|p| tree.label(p).to_string()),
                prob: Prob::Number(tree.prob(id)),
                stage: tree.stage(id),
                data: data(id),
            })
            .collect();
        TreeFile { problem, exact: false, nodes }
    }
}

impl Instance {
    fn entry(&self, id: NodeId, key: &str) -> Option<&Entry> {
        self.data[id.0].get(key)
    }

    fn missing(&self, id: NodeId, key: &str, what: &str) -> CliError {
        CliError::Validation(format!("node {}: expected {what} entry `{key}`", self.tree.label(id)))
    }

    pub fn has(&self, id: NodeId, key: &str) -> bool {
        self.entry(id, key).is_some()
    }

    pub fn scalar(&self, id: NodeId, key: &str) -> Result<f64, CliError> {
        match self.entry(id, key) {
            Some(Entry::Scalar(v)) => Ok(*v),
            Some(Entry::Vector(v)) if v.len() == 1 => Ok(v[0]),
            _ => Err(self.missing(id, key, "scalar")),
        }
    }

    pub fn vector(&self, id: NodeId, key: &str) -> Result<Vec<f64>, CliError> {
        match self.entry(id, key) {
            Some(Entry::Scalar(v)) => Ok(vec![*v]),
            Some(Entry::Vector(v)) => Ok(v.clone()),
            Some(Entry::Matrix(m)) if m.is_empty() => Ok(vec![]),
            _ => Err(self.missing(id, key, "vector")),
        }
    }

    /// Matrix entry with the given column count (scalars read as `1x1`, vectors as one row).
    pub fn matrix(&self, id: NodeId, key: &str, ncols: usize) -> Result<DMatrix<f64>, CliError> {
        let m = match self.entry(id, key) {
            Some(Entry::Scalar(v)) => matrix(&[vec![*v]], ncols),
            Some(Entry::Vector(v)) if v.is_empty() => Ok(DMatrix::zeros(0, ncols)),
            Some(Entry::Vector(v)) => matrix(std::slice::from_ref(v), ncols),
            Some(Entry::Matrix(m)) => matrix(m, ncols),
            _ => return Err(self.missing(id, key, "matrix")),
        };
        m.map_err(|e| CliError::Validation(format!("node {} entry `{key}`: {e}", self.tree.label(id))))
    }

    /// `(rows, cols)` of a numeric entry; scalars are `1x1`, vectors one column.
    pub fn shape(&self, id: NodeId, key: &str) -> Option<(usize, usize)> {
        match self.entry(id, key)? {
            Entry::Scalar(_) => Some((1, 1)),
            Entry::Vector(v) => Some((v.len(), 1)),
            Entry::Matrix(m) => Some((m.len(), m.first().map_or(0, Vec::len))),
            _ => None,
        }
    }

    pub fn text(&self, id: NodeId, key: &str) -> Result<&str, CliError> {
        match self.entry(id, key) {
            Some(Entry::Text(t)) => Ok(t),
            _ => Err(self.missing(id, key, "text")),
        }
    }

    pub fn function(&self, id: NodeId, key: &str) -> Result<ConvexFn, CliError> {
        match self.entry(id, key) {
            Some(Entry::Function(f)) => f
                .to_convex()
                .map_err(|e| CliError::Validation(format!("node {} entry `{key}`: {e}", self.tree.label(id)))),
            _ => Err(self.missing(id, key, "function")),
        }
    }

    pub fn kind(&self) -> Result<ProblemKind, CliError> {
        self.problem
            .as_ref()
            .map(|p| p.kind)
            .ok_or_else(|| CliError::Validation("tree file has no `problem` header".into()))
    }

    pub fn dims(&self) -> Vec<usize> {
        self.problem.as_ref().map(|p| p.dims.clone()).unwrap_or_default()
    }
}
