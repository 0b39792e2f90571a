//! Convex multistage dynamic programming on finite scenario trees.
//!
//! The crate is `no_std` (with `alloc`). Everything works over a validated
//! [`tree::ScenarioTree`]: node-attached convex functions ([`convexfn::ConvexFn`])
//! are pushed backwards through partial minimization and probability-weighted
//! sums ([`bellman`]), and every dynamic-programming value can be checked against
//! the flattened deterministic-equivalent program ([`extensive`]).
//!
//! Application drivers: [`stopping`], [`control`], [`lagrange`], [`hedging`].
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bellman;
pub mod control;
pub mod convexfn;
pub mod error;
pub mod extensive;
pub mod hedging;
pub mod lagrange;
pub mod linalg;
pub mod lp;
pub mod num;
pub(crate) mod par;
pub mod stopping;
pub mod tree;

pub use convexfn::{ConvexFn, LinealitySpace, Selector};
pub use error::{Error, Result};
pub use tree::{AdaptedProcess, NodeId, RawNode, ScenarioTree};
