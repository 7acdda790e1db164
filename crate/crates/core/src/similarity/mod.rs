//! Blended structural + semantic graph similarity.
//!
//! `S = alpha * s_struct + (1 - alpha) * s_sem`, where `s_struct` is a
//! normalized graph edit distance and `s_sem` maps the cosine of pooled node
//! features into `[0, 1]`.

mod ged;

use serde::{Deserialize, Serialize};

pub use ged::{ged_prepared, mapping_cost, substitution_cost, GedResult};

use crate::embedding::{cosine, pool_graph};
use crate::graph::ReasoningGraph;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditCosts {
    pub node_insert: f64,
    pub node_delete: f64,
    pub node_relabel: f64,
    pub edge_insert: f64,
    pub edge_delete: f64,
}

impl Default for EditCosts {
    fn default() -> Self {
        EditCosts {
            node_insert: 1.0,
            node_delete: 1.0,
            node_relabel: 1.0,
            edge_insert: 1.0,
            edge_delete: 1.0,
        }
    }
}

impl EditCosts {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.node_insert,
            self.node_delete,
            self.node_relabel,
            self.edge_insert,
            self.edge_delete,
        ];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidConfig("edit costs must be finite and >= 0".into()));
        }
        if self.node_relabel > self.node_insert + self.node_delete {
            return Err(Error::InvalidConfig(
                "node_relabel must not exceed node_insert + node_delete".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub alpha: f64,
    pub edit_costs: EditCosts,
    pub exact_ged_max_nodes: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            alpha: 0.5,
            edit_costs: EditCosts::default(),
            exact_ged_max_nodes: 8,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if self.exact_ged_max_nodes == 0 || self.exact_ged_max_nodes > 16 {
            return Err(Error::InvalidConfig("exact_ged_max_nodes must lie in 1..=16".into()));
        }
        self.edit_costs.validate()
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// A graph with its adjacency masks and pooled feature precomputed.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    graph: ReasoningGraph,
    adj: Vec<u8>,
    pooled: Option<Vec<f64>>,
}

impl PreparedGraph {
    pub fn new(graph: ReasoningGraph) -> Self {
        let n = graph.len();
        let mut adj = vec![0u8; n * n];
        for e in graph.edges() {
            if let (Some(s), Some(d)) = (graph.index_of(&e.src), graph.index_of(&e.dst)) {
                adj[s * n + d] |= e.kind.bit();
            }
        }
        let pooled = pool_graph(&graph).ok();
        PreparedGraph { graph, adj, pooled }
    }

    pub fn graph(&self) -> &ReasoningGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub(crate) fn mask(&self, i: usize, j: usize) -> u8 {
        self.adj[i * self.graph.len() + j]
    }

    pub(crate) fn degree(&self, i: usize) -> usize {
        self.graph.successors(i).len() + self.graph.predecessors(i).len()
    }

    pub fn pooled(&self) -> Option<&[f64]> {
        self.pooled.as_deref()
    }
}

/// Component scores behind one similarity value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub score: f64,
    pub s_struct: f64,
    pub s_sem: f64,
    pub ged: f64,
    pub approximate: bool,
}

fn normalizer(a: &ReasoningGraph, b: &ReasoningGraph, costs: &EditCosts) -> f64 {
    let d = costs.node_insert * (a.len() + b.len()) as f64 + costs.edge_insert * (a.edge_count() + b.edge_count()) as f64;
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

fn struct_from_ged(a: &ReasoningGraph, b: &ReasoningGraph, costs: &EditCosts, ged: f64) -> f64 {
    (1.0 - ged / normalizer(a, b, costs)).clamp(0.0, 1.0)
}

fn sem_from_pooled(a: &[f64], b: &[f64]) -> f64 {
    let zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
    if zero(a) || zero(b) {
        return 0.5;
    }
    ((1.0 + cosine(a, b)) / 2.0).clamp(0.0, 1.0)
}

pub fn ged(g1: &ReasoningGraph, g2: &ReasoningGraph, cfg: &SimilarityConfig) -> GedResult {
    let (a, b) = (PreparedGraph::new(g1.clone()), PreparedGraph::new(g2.clone()));
    ged_prepared(&a, &b, &cfg.edit_costs, cfg.exact_ged_max_nodes, None)
}

pub fn s_struct(g1: &ReasoningGraph, g2: &ReasoningGraph, cfg: &SimilarityConfig) -> f64 {
    struct_from_ged(g1, g2, &cfg.edit_costs, ged(g1, g2, cfg).cost)
}

pub fn s_sem(g1: &ReasoningGraph, g2: &ReasoningGraph) -> Result<f64> {
    let (p1, p2) = (pool_graph(g1)?, pool_graph(g2)?);
    Ok(sem_from_pooled(&p1, &p2))
}

pub fn similarity(g1: &ReasoningGraph, g2: &ReasoningGraph, cfg: &SimilarityConfig) -> Result<f64> {
    Ok(similarity_detail(g1, g2, cfg)?.score)
}

pub fn similarity_detail(g1: &ReasoningGraph, g2: &ReasoningGraph, cfg: &SimilarityConfig) -> Result<SimilarityScore> {
    similarity_prepared(&PreparedGraph::new(g1.clone()), &PreparedGraph::new(g2.clone()), cfg)
}

pub fn similarity_prepared(a: &PreparedGraph, b: &PreparedGraph, cfg: &SimilarityConfig) -> Result<SimilarityScore> {
    let (Some(pa), Some(pb)) = (a.pooled(), b.pooled()) else {
        return Err(Error::EmptyGraph);
    };
    let s_sem = sem_from_pooled(pa, pb);
    let g = ged_prepared(a, b, &cfg.edit_costs, cfg.exact_ged_max_nodes, None);
    let s_struct = struct_from_ged(a.graph(), b.graph(), &cfg.edit_costs, g.cost);
    Ok(SimilarityScore {
        score: cfg.alpha * s_struct + (1.0 - cfg.alpha) * s_sem,
        s_struct,
        s_sem,
        ged: g.cost,
        approximate: g.approximate,
    })
}

/// Cheap upper bound on [`similarity_prepared`], from node/edge count gaps.
pub fn similarity_upper_bound(a: &PreparedGraph, b: &PreparedGraph, cfg: &SimilarityConfig) -> f64 {
    let (Some(pa), Some(pb)) = (a.pooled(), b.pooled()) else {
        return 0.0;
    };
    let c = &cfg.edit_costs;
    let (ga, gb) = (a.graph(), b.graph());
    let node_gap = ga.len().abs_diff(gb.len()) as f64 * c.node_insert.min(c.node_delete);
    let edge_gap = ga.edge_count().abs_diff(gb.edge_count()) as f64 * c.edge_insert.min(c.edge_delete);
    let ub_struct = struct_from_ged(ga, gb, c, node_gap + edge_gap);
    cfg.alpha * ub_struct + (1.0 - cfg.alpha) * sem_from_pooled(pa, pb)
}
