//! The objective `L = Cost + λ·Inconsistency`.
//!
//! Cost is structural (calls, latency, depth) plus metered spend (tokens,
//! tool calls, latency), charged for every node that actually runs. A reused
//! node is charged a flat retrieval price instead. Inconsistency is one minus
//! the size-weighted mean similarity of reused regions to their sources.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{CostAnnotation, GraphError, NodeId, ReasoningGraph};
use crate::repository::RepoView;
use crate::similarity::{similarity, SimilarityConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostCoefficients {
    /// Per executed node.
    pub a1: f64,
    /// Per millisecond of executed latency.
    pub a2: f64,
    /// Per edge of the longest path.
    pub a3: f64,
    pub c_llm: f64,
    pub c_tool: f64,
    pub c_lat: f64,
    /// Charged per reused node in place of its execution cost.
    pub c_retrieve: f64,
}

impl Default for CostCoefficients {
    fn default() -> Self {
        CostCoefficients {
            a1: 1.0,
            a2: 0.001,
            a3: 0.5,
            c_llm: 0.001,
            c_tool: 0.1,
            c_lat: 0.001,
            c_retrieve: 0.05,
        }
    }
}

impl CostCoefficients {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("c_llm", self.c_llm),
            ("c_tool", self.c_tool),
            ("c_lat", self.c_lat),
            ("c_retrieve", self.c_retrieve),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("cost.{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Everything a node contributes when executed natively, excluding depth.
    pub fn native_node_cost(&self, m: &CostAnnotation) -> f64 {
        self.a1 + self.a2 * m.latency_ms + self.c_llm * m.tokens as f64 + self.c_tool * m.tool_calls as f64 + self.c_lat * m.latency_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub calls: usize,
    pub latency_ms: f64,
    pub depth: usize,
    pub cost_calls: f64,
    pub cost_latency: f64,
    pub cost_depth: f64,
    pub cost_meters: f64,
    pub retrieval_overhead: f64,
    pub inconsistency: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn cost(&self) -> f64 {
        self.cost_calls + self.cost_latency + self.cost_depth + self.cost_meters + self.retrieval_overhead
    }

    pub fn recomputed_total(&self) -> f64 {
        self.cost() + self.lambda * self.inconsistency
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub graph_id: String,
    pub version: u32,
    pub anchor: NodeId,
}

/// Nodes of the stitched graph inherited from one pinned source subgraph.
/// `depth` is the descendant depth of the source subgraph they are compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReuseRegion {
    pub nodes: BTreeSet<NodeId>,
    pub source: SourceRef,
    pub depth: usize,
}

/// Meter totals over nodes not in `reused`: what an execution should measure.
pub fn predicted_meters(graph: &ReasoningGraph, reused: &BTreeSet<NodeId>) -> CostAnnotation {
    let mut total = CostAnnotation::default();
    for n in graph.nodes() {
        if !reused.contains(&n.id) {
            total.add(&n.meters);
        }
    }
    total
}

/// Cost fields of the breakdown; `inconsistency`, `lambda` are left at zero.
pub fn structural_cost(graph: &ReasoningGraph, coeffs: &CostCoefficients, reused: &BTreeSet<NodeId>) -> Result<LossBreakdown> {
    if let Some(unknown) = reused.iter().find(|id| !graph.contains(id)) {
        return Err(GraphError::UnknownNode(unknown.clone()).into());
    }
    let meters = predicted_meters(graph, reused);
    let calls = graph.len() - reused.len();
    let depth = graph.longest_path_edges();
    let cost_meters = coeffs.c_llm * meters.tokens as f64 + coeffs.c_tool * meters.tool_calls as f64 + coeffs.c_lat * meters.latency_ms;
    let mut b = LossBreakdown {
        calls,
        latency_ms: meters.latency_ms,
        depth,
        cost_calls: coeffs.a1 * calls as f64,
        cost_latency: coeffs.a2 * meters.latency_ms,
        cost_depth: coeffs.a3 * depth as f64,
        cost_meters,
        retrieval_overhead: coeffs.c_retrieve * reused.len() as f64,
        ..LossBreakdown::default()
    };
    b.total = b.cost();
    Ok(b)
}

/// `1 - Σ w·s / Σ w` over `(weight, similarity)` pairs; 0 with no weight.
pub fn weighted_inconsistency(parts: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (mut w_sum, mut ws_sum) = (0.0, 0.0);
    for (w, s) in parts {
        w_sum += w;
        ws_sum += w * s;
    }
    if w_sum == 0.0 {
        0.0
    } else {
        (1.0 - ws_sum / w_sum).clamp(0.0, 1.0)
    }
}

/// Similarity of a region (as an induced subgraph of `graph`) to the source
/// subgraph it was taken from.
pub fn region_similarity(graph: &ReasoningGraph, region: &ReuseRegion, view: &RepoView, cfg: &SimilarityConfig) -> Result<f64> {
    let src = &region.source;
    let dangling = || Error::DanglingProvenance {
        graph_id: src.graph_id.clone(),
        version: src.version,
        node_id: src.anchor.clone(),
    };
    let entry = view.get(&src.graph_id, Some(src.version)).map_err(|_| dangling())?;
    let source = entry.graph.descendant_subgraph(&src.anchor, region.depth).map_err(|_| dangling())?;
    let reused = graph.induced_subgraph(region.nodes.iter().map(String::as_str))?;
    similarity(&reused, &source, cfg)
}

pub fn inconsistency(graph: &ReasoningGraph, regions: &[ReuseRegion], view: &RepoView, cfg: &SimilarityConfig) -> Result<f64> {
    let mut parts = Vec::with_capacity(regions.len());
    for r in regions {
        parts.push((r.nodes.len() as f64, region_similarity(graph, r, view, cfg)?));
    }
    Ok(weighted_inconsistency(parts))
}

pub fn total_loss(
    graph: &ReasoningGraph,
    regions: &[ReuseRegion],
    coeffs: &CostCoefficients,
    lambda: f64,
    view: &RepoView,
    cfg: &SimilarityConfig,
) -> Result<LossBreakdown> {
    let reused: BTreeSet<NodeId> = regions.iter().flat_map(|r| r.nodes.iter().cloned()).collect();
    let mut b = structural_cost(graph, coeffs, &reused)?;
    b.inconsistency = inconsistency(graph, regions, view, cfg)?;
    b.lambda = lambda;
    b.total = b.recomputed_total();
    Ok(b)
}
