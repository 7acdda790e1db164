//! Graph memoization for reasoning workflows.
//!
//! Reasoning runs are stored as labeled DAGs in a versioned repository. New
//! tasks retrieve similar prior subgraphs (blended graph-edit-distance and
//! embedding similarity) and stitch them into their own plan whenever doing so
//! lowers `cost + lambda * inconsistency`.
//!
//! Module map:
//! - [`graph`]: reasoning DAGs, validation, hashing, traversal
//! - [`embedding`]: deterministic feature-hashing text vectors
//! - [`similarity`]: exact/approximate GED and the blended similarity operator
//! - [`repository`]: append-only versioned store, snapshots, retrieval, pruning
//! - [`cost`]: the cost / inconsistency objective
//! - [`memo`]: candidate retrieval, greedy and beam stitching
//! - [`executor`]: topological execution with replay of reused nodes
//! - [`harness`]: synthetic workloads, cold vs memoized runs, sweeps, reports

pub mod cost;
pub mod embedding;
mod error;
pub mod executor;
pub mod graph;
pub mod harness;
pub mod memo;
pub mod repository;
pub mod similarity;
mod util;

pub use error::{Error, Result};
pub use graph::{
    CostAnnotation, EdgeKind, GraphError, NodeId, NodeKind, Provenance, ReasoningEdge,
    ReasoningGraph, ReasoningNode, Violation,
};
