//! Small hand-built scenarios with known stitching outcomes.

use crate::cost::CostCoefficients;
use crate::embedding::{EmbeddingSpec, HashingEmbedder};
use crate::graph::{CostAnnotation, EdgeKind, NodeKind, ReasoningEdge, ReasoningGraph, ReasoningNode};
use crate::memo::{Planner, ReusePolicy, TaskSpec};
use crate::repository::{EntryContent, Store};
use crate::similarity::SimilarityConfig;
use crate::Result;

/// A planner that always returns the same plan.
#[derive(Clone, Debug)]
pub struct FixedPlanner(pub ReasoningGraph);

impl Planner for FixedPlanner {
    fn plan(&self, _task: &TaskSpec) -> Result<ReasoningGraph> {
        Ok(self.0.clone())
    }
}

/// Everything needed to stitch one task against a prepared store.
pub struct Scenario {
    pub store: Store,
    pub task: TaskSpec,
    pub planner: FixedPlanner,
    pub policy: ReusePolicy,
    pub coeffs: CostCoefficients,
    pub similarity: SimilarityConfig,
}

const LABELS: [(&str, &str); 4] = [
    ("a", "load orders ledger"),
    ("b", "pivot weekly revenue"),
    ("c", "forecast churn cohort"),
    ("x", "email summary digest"),
];

fn label(id: &str) -> &'static str {
    LABELS.iter().find(|(k, _)| *k == id).map(|(_, l)| *l).expect("known fixture node")
}

fn chain(embedder: &HashingEmbedder, ids: &[&str]) -> ReasoningGraph {
    let meters = CostAnnotation::new(1000, 0, 100.0);
    let mut g = ReasoningGraph::new(embedder.spec().dim);
    for id in ids {
        let l = label(id);
        g.add_node(ReasoningNode::new(*id, NodeKind::SqlCte, l, embedder.node_feature(NodeKind::SqlCte, l)).with_meters(meters.clone()))
            .expect("fresh id");
    }
    for w in ids.windows(2) {
        g.add_edge(ReasoningEdge::new(w[0], w[1], EdgeKind::Dataflow)).expect("chain is acyclic");
    }
    g
}

/// Plan `a → b → c` against three prior runs: `a → b`, `a`, and `b → c → x`.
///
/// Greedy takes the largest immediate saving at `a` (reusing `a → b`), which
/// leaves `c` only reachable through the imperfect `c → x` source, too
/// inconsistent to accept at this `lambda`. Beam search reuses `a` alone and
/// then `b → c`, covering the whole plan with perfect fidelity.
pub fn beam_advantage() -> Result<Scenario> {
    let spec = EmbeddingSpec::default();
    let embedder = spec.embedder()?;
    let store = Store::in_memory(spec);
    let demand = embedder.embed_text("weekly revenue and churn report");
    for (id, nodes) in [("prior-ab", &["a", "b"][..]), ("prior-a", &["a"][..]), ("prior-bcx", &["b", "c", "x"][..])] {
        store.put(EntryContent {
            graph_id: id.into(),
            graph: chain(&embedder, nodes),
            task_embedding: demand.clone(),
            ..EntryContent::default()
        })?;
    }
    let task = TaskSpec {
        id: "fixture-beam".into(),
        description: "weekly revenue and churn report".into(),
        demand,
        family: "fixture".into(),
        seed: 0,
    };
    let policy = ReusePolicy {
        lambda: 100.0,
        tau_sim: 0.0,
        candidate_depth: 1,
        beam_width: 2,
        ..ReusePolicy::default()
    };
    Ok(Scenario {
        store,
        task,
        planner: FixedPlanner(chain(&embedder, &["a", "b", "c"])),
        policy,
        coeffs: CostCoefficients::default(),
        similarity: SimilarityConfig::default(),
    })
}
