//! Labeled reasoning DAGs.
//!
//! A [`ReasoningGraph`] keeps its nodes sorted by identifier and its edges
//! sorted by `(src, dst, kind)`, so the JSON form produced by serde is
//! canonical and [`ReasoningGraph::canonical_hash`] is independent of the
//! order in which the graph was built.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;

pub type NodeId = String;

/// Default feature dimension for reasoning graphs.
pub const DEFAULT_DIM: usize = 64;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    FeatureDef,
    #[serde(rename = "SQLCTE")]
    SqlCte,
    ToolCall,
    Prompt,
    Aggregate,
    Generic,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::FeatureDef,
        NodeKind::SqlCte,
        NodeKind::ToolCall,
        NodeKind::Prompt,
        NodeKind::Aggregate,
        NodeKind::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::FeatureDef => "FeatureDef",
            NodeKind::SqlCte => "SQLCTE",
            NodeKind::ToolCall => "ToolCall",
            NodeKind::Prompt => "Prompt",
            NodeKind::Aggregate => "Aggregate",
            NodeKind::Generic => "Generic",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Causal,
    Dataflow,
    Entailment,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 3] = [EdgeKind::Causal, EdgeKind::Dataflow, EdgeKind::Entailment];

    /// Bit used for this kind in adjacency masks.
    pub fn bit(self) -> u8 {
        match self {
            EdgeKind::Causal => 1,
            EdgeKind::Dataflow => 2,
            EdgeKind::Entailment => 4,
        }
    }
}

/// Additive execution meters attached to a node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostAnnotation {
    pub tokens: u64,
    pub tool_calls: u64,
    pub latency_ms: f64,
}

impl CostAnnotation {
    pub fn new(tokens: u64, tool_calls: u64, latency_ms: f64) -> Self {
        CostAnnotation {
            tokens,
            tool_calls,
            latency_ms,
        }
    }

    pub fn add(&mut self, other: &CostAnnotation) {
        self.tokens += other.tokens;
        self.tool_calls += other.tool_calls;
        self.latency_ms += other.latency_ms;
    }

    pub fn is_valid(&self) -> bool {
        self.latency_ms.is_finite() && self.latency_ms >= 0.0
    }
}

/// Pins a reused node to the exact stored graph version it came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub graph_id: String,
    pub version: u32,
    pub node_id: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    pub feature: Vec<f64>,
    pub meters: CostAnnotation,
    pub origin: Option<Provenance>,
}

impl ReasoningNode {
    pub fn new(id: impl Into<NodeId>, kind: NodeKind, label: impl Into<String>, feature: Vec<f64>) -> Self {
        ReasoningNode {
            id: id.into(),
            kind,
            label: label.into(),
            feature,
            meters: CostAnnotation::default(),
            origin: None,
        }
    }

    pub fn with_meters(mut self, meters: CostAnnotation) -> Self {
        self.meters = meters;
        self
    }

    pub fn with_origin(mut self, origin: Provenance) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn is_reused(&self) -> bool {
        self.origin.is_some()
    }

    fn feature_is_normalized(&self) -> bool {
        if self.feature.iter().any(|x| !x.is_finite()) {
            return false;
        }
        let sq: f64 = self.feature.iter().map(|x| x * x).sum();
        sq == 0.0 || (sq.sqrt() - 1.0).abs() <= NORM_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    pub label: String,
}

impl ReasoningEdge {
    pub fn new(src: impl Into<NodeId>, dst: impl Into<NodeId>, kind: EdgeKind) -> Self {
        ReasoningEdge {
            src: src.into(),
            dst: dst.into(),
            kind,
            label: String::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn key(&self) -> (&str, &str, EdgeKind) {
        (&self.src, &self.dst, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate node id {0:?}")]
    DuplicateNodeId(NodeId),
    #[error("node {node:?} has feature dimension {found}, graph expects {expected}")]
    DimensionMismatch {
        node: NodeId,
        expected: usize,
        found: usize,
    },
    #[error("node {0:?} has a feature vector that is neither unit-norm nor zero")]
    InvalidFeature(NodeId),
    #[error("node {0:?} has negative or non-finite meters")]
    InvalidMeters(NodeId),
    #[error("edge {src:?} -> {dst:?} names an unknown endpoint")]
    UnknownEndpoint { src: NodeId, dst: NodeId },
    #[error("edge {src:?} -> {dst:?} would introduce a cycle")]
    CycleIntroduced { src: NodeId, dst: NodeId },
    #[error("duplicate edge {src:?} -> {dst:?} ({kind:?})")]
    DuplicateEdge {
        src: NodeId,
        dst: NodeId,
        kind: EdgeKind,
    },
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("graph document is invalid: {0:?}")]
    Invalid(Vec<Violation>),
}

/// A structural problem reported by [`ReasoningGraph::validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    CycleIntroduced,
    DanglingEdge { src: NodeId, dst: NodeId },
    SelfLoop(NodeId),
    DuplicateNodeId(NodeId),
    DuplicateEdge { src: NodeId, dst: NodeId, kind: EdgeKind },
    DimensionMismatch { node: NodeId, expected: usize, found: usize },
    NonNormalFeature(NodeId),
    InvalidMeters(NodeId),
}

/// Labeled directed acyclic graph of reasoning steps.
#[derive(Clone, Debug)]
pub struct ReasoningGraph {
    dim: usize,
    nodes: Vec<ReasoningNode>,
    edges: Vec<ReasoningEdge>,
    index: HashMap<NodeId, usize>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

impl PartialEq for ReasoningGraph {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.nodes == other.nodes && self.edges == other.edges
    }
}

/// Wire form of a graph. Deserializing a [`ReasoningGraph`] goes through this
/// document and is rejected unless [`GraphDoc::violations`] is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub dim: usize,
    pub nodes: Vec<ReasoningNode>,
    pub edges: Vec<ReasoningEdge>,
}

impl GraphDoc {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                out.push(Violation::DuplicateNodeId(n.id.clone()));
            }
            if n.feature.len() != self.dim {
                out.push(Violation::DimensionMismatch {
                    node: n.id.clone(),
                    expected: self.dim,
                    found: n.feature.len(),
                });
            } else if !n.feature_is_normalized() {
                out.push(Violation::NonNormalFeature(n.id.clone()));
            }
            if !n.meters.is_valid() {
                out.push(Violation::InvalidMeters(n.id.clone()));
            }
        }
        let mut edge_keys = HashSet::new();
        let mut dangling = false;
        for e in &self.edges {
            if !seen.contains(e.src.as_str()) || !seen.contains(e.dst.as_str()) {
                out.push(Violation::DanglingEdge {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                });
                dangling = true;
            }
            if e.src == e.dst {
                out.push(Violation::SelfLoop(e.src.clone()));
            }
            if !edge_keys.insert(e.key()) {
                out.push(Violation::DuplicateEdge {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    kind: e.kind,
                });
            }
        }
        if !dangling && has_cycle(&self.nodes, &self.edges) {
            out.push(Violation::CycleIntroduced);
        }
        out
    }
}

fn has_cycle(nodes: &[ReasoningNode], edges: &[ReasoningEdge]) -> bool {
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut indeg = vec![0usize; nodes.len()];
    let mut succ = vec![Vec::new(); nodes.len()];
    for e in edges {
        if let (Some(&s), Some(&d)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) {
            succ[s].push(d);
            indeg[d] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = queue.pop_front() {
        seen += 1;
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    seen != nodes.len()
}

impl ReasoningGraph {
    pub fn new(dim: usize) -> Self {
        ReasoningGraph {
            dim,
            nodes: Vec::new(),
            edges: Vec::new(),
            index: HashMap::new(),
            succ: Vec::new(),
            pred: Vec::new(),
        }
    }

    /// Builds a graph from parts without checking any invariant. Intended for
    /// tests and for inspecting untrusted content with [`Self::validate`].
    pub fn from_parts_unchecked(dim: usize, mut nodes: Vec<ReasoningNode>, mut edges: Vec<ReasoningEdge>) -> Self {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        edges.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut g = ReasoningGraph {
            dim,
            nodes,
            edges,
            index: HashMap::new(),
            succ: Vec::new(),
            pred: Vec::new(),
        };
        g.reindex();
        g
    }

    /// Validating constructor used for untrusted input.
    pub fn from_doc(doc: GraphDoc) -> Result<Self, GraphError> {
        let violations = doc.violations();
        if !violations.is_empty() {
            return Err(GraphError::Invalid(violations));
        }
        Ok(Self::from_parts_unchecked(doc.dim, doc.nodes, doc.edges))
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            dim: self.dim,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, crate::Error> {
        let doc: GraphDoc = serde_json::from_slice(bytes)?;
        Ok(Self::from_doc(doc)?)
    }

    /// Canonical JSON bytes (sorted nodes and edges, fixed field order).
    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("graph serialization is infallible")
    }

    fn reindex(&mut self) {
        self.index = self.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        self.succ = vec![Vec::new(); self.nodes.len()];
        self.pred = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if let (Some(&s), Some(&d)) = (self.index.get(&e.src), self.index.get(&e.dst)) {
                self.succ[s].push(d);
                self.pred[d].push(s);
            }
        }
        for list in self.succ.iter_mut().chain(self.pred.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Nodes in ascending identifier order.
    pub fn nodes(&self) -> &[ReasoningNode] {
        &self.nodes
    }

    /// Edges in ascending `(src, dst, kind)` order.
    pub fn edges(&self) -> &[ReasoningEdge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&ReasoningNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Position of `id` in [`Self::nodes`].
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Successor positions of the node at position `i`, ascending and deduplicated.
    pub fn successors(&self, i: usize) -> &[usize] {
        &self.succ[i]
    }

    pub fn predecessors(&self, i: usize) -> &[usize] {
        &self.pred[i]
    }

    pub fn add_node(&mut self, node: ReasoningNode) -> Result<(), GraphError> {
        if self.index.contains_key(&node.id) {
            return Err(GraphError::DuplicateNodeId(node.id));
        }
        if node.feature.len() != self.dim {
            return Err(GraphError::DimensionMismatch {
                node: node.id,
                expected: self.dim,
                found: node.feature.len(),
            });
        }
        if !node.feature_is_normalized() {
            return Err(GraphError::InvalidFeature(node.id));
        }
        if !node.meters.is_valid() {
            return Err(GraphError::InvalidMeters(node.id));
        }
        let pos = self.nodes.partition_point(|n| n.id < node.id);
        self.nodes.insert(pos, node);
        self.reindex();
        Ok(())
    }

    /// Inserts `edge` if the graph stays acyclic; otherwise leaves the graph untouched.
    pub fn add_edge(&mut self, edge: ReasoningEdge) -> Result<(), GraphError> {
        let (Some(&s), Some(&d)) = (self.index.get(&edge.src), self.index.get(&edge.dst)) else {
            return Err(GraphError::UnknownEndpoint {
                src: edge.src,
                dst: edge.dst,
            });
        };
        let pos = match self.edges.binary_search_by(|e| e.key().cmp(&edge.key())) {
            Ok(_) => {
                return Err(GraphError::DuplicateEdge {
                    src: edge.src,
                    dst: edge.dst,
                    kind: edge.kind,
                })
            }
            Err(pos) => pos,
        };
        if s == d || self.reaches(d, s) {
            return Err(GraphError::CycleIntroduced {
                src: edge.src,
                dst: edge.dst,
            });
        }
        self.edges.insert(pos, edge);
        if let Err(p) = self.succ[s].binary_search(&d) {
            self.succ[s].insert(p, d);
        }
        if let Err(p) = self.pred[d].binary_search(&s) {
            self.pred[d].insert(p, s);
        }
        Ok(())
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            if u == to {
                return true;
            }
            if std::mem::replace(&mut seen[u], true) {
                continue;
            }
            stack.extend(self.succ[u].iter().copied().filter(|&v| !seen[v]));
        }
        false
    }

    /// Replaces the provenance of an existing node. Structure is untouched.
    pub fn set_origin(&mut self, id: &str, origin: Option<Provenance>) -> Result<(), GraphError> {
        let i = *self.index.get(id).ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
        self.nodes[i].origin = origin;
        Ok(())
    }

    pub fn validate(&self) -> Vec<Violation> {
        GraphDoc {
            dim: self.dim,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
        .violations()
    }

    /// Topological order of node positions, smallest identifier first among ready nodes.
    pub fn topological_indices(&self) -> Result<Vec<usize>, GraphError> {
        let mut indeg: Vec<usize> = self.pred.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<usize>> =
            (0..self.nodes.len()).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(u)) = heap.pop() {
            out.push(u);
            for &v in &self.succ[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    heap.push(Reverse(v));
                }
            }
        }
        if out.len() != self.nodes.len() {
            return Err(GraphError::CyclicGraph);
        }
        Ok(out)
    }

    pub fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        Ok(self
            .topological_indices()?
            .into_iter()
            .map(|i| self.nodes[i].id.clone())
            .collect())
    }

    /// Number of edges on the longest directed path (0 for an empty or single-node graph).
    pub fn longest_path_edges(&self) -> usize {
        let Ok(order) = self.topological_indices() else {
            return 0;
        };
        let mut depth = vec![0usize; self.nodes.len()];
        let mut best = 0;
        for u in order {
            best = best.max(depth[u]);
            for &v in &self.succ[u] {
                depth[v] = depth[v].max(depth[u] + 1);
            }
        }
        best
    }

    /// Positions reachable from `root` within `max_depth` edges, including `root`.
    pub fn reachable_within(&self, root: usize, max_depth: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            if dist[u] == max_depth {
                continue;
            }
            for &v in &self.succ[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (0..self.nodes.len()).filter(|&i| dist[i] != usize::MAX).collect()
    }

    pub fn descendant_subgraph(&self, root: &str, max_depth: usize) -> Result<ReasoningGraph, GraphError> {
        let r = self.index_of(root).ok_or_else(|| GraphError::UnknownNode(root.to_string()))?;
        Ok(self.induced_by_positions(&self.reachable_within(r, max_depth)))
    }

    /// Induced subgraph on the given node identifiers; unknown ids are an error.
    pub fn induced_subgraph<'a, I>(&self, ids: I) -> Result<ReasoningGraph, GraphError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut positions = Vec::new();
        for id in ids {
            positions.push(self.index_of(id).ok_or_else(|| GraphError::UnknownNode(id.to_string()))?);
        }
        positions.sort_unstable();
        positions.dedup();
        Ok(self.induced_by_positions(&positions))
    }

    /// `positions` must be sorted ascending.
    pub(crate) fn induced_by_positions(&self, positions: &[usize]) -> ReasoningGraph {
        let keep: BTreeSet<usize> = positions.iter().copied().collect();
        let nodes: Vec<ReasoningNode> = keep.iter().map(|&i| self.nodes[i].clone()).collect();
        let edges: Vec<ReasoningEdge> = self
            .edges
            .iter()
            .filter(|e| {
                let inside = |id: &NodeId| self.index.get(id).is_some_and(|i| keep.contains(i));
                inside(&e.src) && inside(&e.dst)
            })
            .cloned()
            .collect();
        // Sorted order is inherited from `self`.
        let mut g = ReasoningGraph {
            dim: self.dim,
            nodes,
            edges,
            index: HashMap::new(),
            succ: Vec::new(),
            pred: Vec::new(),
        };
        g.reindex();
        g
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn canonical_hash(&self) -> String {
        sha256_hex(&self.to_canonical_json())
    }
}

impl Serialize for ReasoningGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct DocRef<'a> {
            dim: usize,
            nodes: &'a [ReasoningNode],
            edges: &'a [ReasoningEdge],
        }
        DocRef {
            dim: self.dim,
            nodes: &self.nodes,
            edges: &self.edges,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReasoningGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = GraphDoc::deserialize(d)?;
        ReasoningGraph::from_doc(doc).map_err(serde::de::Error::custom)
    }
}
