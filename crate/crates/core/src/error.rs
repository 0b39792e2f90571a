//! Error type shared by every module.

use alloc::string::String;

use crate::tree::NodeId;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    // tree validation
    #[error("node {node}: parent {parent} does not exist")]
    OrphanNode { node: String, parent: String },
    #[error("tree must have exactly one root, found {found}")]
    RootCount { found: usize },
    #[error("node {node}: children probabilities sum to {sum}")]
    ProbabilityMass { node: String, sum: f64 },
    #[error("node {node}: bad probability {prob}")]
    BadProbability { node: String, prob: f64 },
    #[error("node {node}: stage {stage} does not follow parent stage {parent_stage}")]
    StageGap { node: String, stage: usize, parent_stage: usize },
    #[error("leaf {node} sits at stage {stage}, horizon is {horizon}")]
    ShortLeaf { node: String, stage: usize, horizon: usize },
    #[error("duplicate node id {node}")]
    DuplicateId { node: String },
    #[error("target stage {to} is later than source stage {from}")]
    StageOrder { from: usize, to: usize },

    // convex functions
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("backend clash: {0}")]
    BackendClash(&'static str),
    #[error("partial minimization is unbounded below{}", at(node))]
    UnboundedBelow { node: Option<NodeId> },
    #[error("recession set is not linear{}", at(node))]
    NonLinearRecession { node: Option<NodeId> },
    #[error("Fourier-Motzkin row count {rows} exceeds cap {cap}")]
    RowBlowup { rows: usize, cap: usize },
    #[error("invalid function data: {0}")]
    InvalidFunction(String),

    // bellman / extensive
    #[error("tilt process is not orthogonal to adapted strategies at stage {stage}")]
    NotPerp { stage: usize, node: NodeId },
    #[error("extensive program is unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("problem is infeasible{}", at(node))]
    Infeasible { node: Option<NodeId> },

    // stopping
    #[error("tree has {nodes} nodes, enumeration cap is {cap}")]
    TreeTooLarge { nodes: usize, cap: usize },
    #[error("reward is not Markov: stage {stage}, nodes {first} and {second}")]
    NotMarkov { stage: usize, first: NodeId, second: NodeId },

    // control
    #[error("Riccati gain matrix is singular{}", at(node))]
    SingularRiccati { node: Option<NodeId> },
    #[error("value function differs within a cell: stage {stage}, nodes {first} and {second}")]
    NotConditionallyIndependent { stage: usize, first: NodeId, second: NodeId },

    // hedging
    #[error("market admits arbitrage; refusing to solve")]
    ArbitrageRefusal,
    #[error("exponential-utility infimum not attained{}", at(node))]
    UnboundedExp { node: Option<NodeId> },
    #[error("loss function decreases near u = {at}")]
    NonMonotone { at: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn at(node: &Option<NodeId>) -> String {
    match node {
        Some(n) => alloc::format!(" at node {n}"),
        None => String::new(),
    }
}

impl Error {
    /// Input/validation errors (as opposed to solver outcomes).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::OrphanNode { .. }
                | Error::RootCount { .. }
                | Error::ProbabilityMass { .. }
                | Error::BadProbability { .. }
                | Error::StageGap { .. }
                | Error::ShortLeaf { .. }
                | Error::DuplicateId { .. }
                | Error::StageOrder { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidFunction(_)
                | Error::NotPerp { .. }
                | Error::TreeTooLarge { .. }
                | Error::InvalidInput(_)
        )
    }

    /// Attach a node id to errors that carry one and do not have it yet.
    pub fn at_node(self, id: NodeId) -> Error {
        match self {
            Error::UnboundedBelow { node: None } => Error::UnboundedBelow { node: Some(id) },
            Error::NonLinearRecession { node: None } => Error::NonLinearRecession { node: Some(id) },
            Error::Infeasible { node: None } => Error::Infeasible { node: Some(id) },
            Error::SingularRiccati { node: None } => Error::SingularRiccati { node: Some(id) },
            Error::UnboundedExp { node: None } => Error::UnboundedExp { node: Some(id) },
            other => other,
        }
    }

    /// Node carried by a solver error, if any.
    pub fn node(&self) -> Option<NodeId> {
        match self {
            Error::UnboundedBelow { node }
            | Error::NonLinearRecession { node }
            | Error::Infeasible { node }
            | Error::SingularRiccati { node }
            | Error::UnboundedExp { node } => *node,
            Error::NotPerp { node, .. } => Some(*node),
            _ => None,
        }
    }
}
