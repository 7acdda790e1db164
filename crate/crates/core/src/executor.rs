//! Topological execution of stitched graphs.
//!
//! Nodes run one at a time in the graph's deterministic topological order.
//! A node carrying provenance is not executed: its output signature is
//! replayed from the source it was reused from, and it contributes no meters
//! and no wall time.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{CostAnnotation, NodeId, NodeKind, Provenance, ReasoningGraph, ReasoningNode};
use crate::repository::RepoView;
use crate::util::{mix64, seeded_hash, sha256_hex};
use crate::{Error, GraphError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeOutput {
    pub output_signature: String,
    pub meters: CostAnnotation,
}

/// Runs one node. Must be deterministic in `(node, inputs, run_seed)`.
pub trait NodeExecutor: Send + Sync {
    fn execute(&self, node: &ReasoningNode, inputs: &[String], run_seed: u64) -> Result<NodeOutput>;
}

/// Where reused nodes get their outputs from.
pub trait ReplaySource {
    fn replay(&self, origin: &Provenance) -> Option<String>;
}

impl ReplaySource for RepoView {
    fn replay(&self, origin: &Provenance) -> Option<String> {
        let entry = self.get(&origin.graph_id, Some(origin.version)).ok()?;
        entry.node_outputs.get(&origin.node_id).cloned()
    }
}

impl ReplaySource for BTreeMap<Provenance, String> {
    fn replay(&self, origin: &Provenance) -> Option<String> {
        self.get(origin).cloned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedProfile {
    /// Latency is scaled by a seeded factor in `[1 - pct/100, 1 + pct/100]`.
    pub latency_jitter_pct: f64,
    pub seed: u64,
}

impl Default for SimulatedProfile {
    fn default() -> Self {
        SimulatedProfile {
            latency_jitter_pct: 0.0,
            seed: 0,
        }
    }
}

/// Emits a node's annotated meters; output is a digest of its label and inputs,
/// so identical sub-computations produce identical signatures.
#[derive(Clone, Debug)]
pub struct SimulatedExecutor {
    profile: SimulatedProfile,
}

pub fn simulated_executor(profile: SimulatedProfile) -> Result<SimulatedExecutor> {
    if !(0.0..=100.0).contains(&profile.latency_jitter_pct) {
        return Err(Error::InvalidConfig(format!(
            "latency_jitter_pct must lie in [0,100], got {}",
            profile.latency_jitter_pct
        )));
    }
    Ok(SimulatedExecutor { profile })
}

/// Digest of a node label and its (sorted) input signatures.
pub fn output_signature(label: &str, inputs: &[String]) -> String {
    let mut sorted: Vec<&str> = inputs.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut buf = Vec::with_capacity(label.len() + 65 * sorted.len() + 1);
    buf.extend_from_slice(label.as_bytes());
    for s in sorted {
        buf.push(0);
        buf.extend_from_slice(s.as_bytes());
    }
    sha256_hex(&buf)
}

impl NodeExecutor for SimulatedExecutor {
    fn execute(&self, node: &ReasoningNode, inputs: &[String], run_seed: u64) -> Result<NodeOutput> {
        let mut meters = node.meters.clone();
        let pct = self.profile.latency_jitter_pct;
        if pct > 0.0 {
            let seed = mix64(self.profile.seed ^ mix64(run_seed)) ^ seeded_hash(self.profile.seed, node.id.as_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let factor = 1.0 + pct / 100.0 * rng.gen_range(-1.0..=1.0);
            meters.latency_ms *= factor;
        }
        Ok(NodeOutput {
            output_signature: output_signature(&node.label, inputs),
            meters,
        })
    }
}

/// Executors by node kind.
#[derive(Clone, Default)]
pub struct ExecutorSet {
    by_kind: BTreeMap<NodeKind, Arc<dyn NodeExecutor>>,
}

impl ExecutorSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// The simulated executor for every kind.
    pub fn simulated(profile: SimulatedProfile) -> Result<Self> {
        let exec: Arc<dyn NodeExecutor> = Arc::new(simulated_executor(profile)?);
        let mut set = Self::new();
        for kind in NodeKind::ALL {
            set.insert(kind, Arc::clone(&exec));
        }
        Ok(set)
    }

    pub fn insert(&mut self, kind: NodeKind, exec: Arc<dyn NodeExecutor>) {
        self.by_kind.insert(kind, exec);
    }

    pub fn get(&self, kind: NodeKind) -> Option<&Arc<dyn NodeExecutor>> {
        self.by_kind.get(&kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventStatus {
    Executed,
    Reused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecEvent {
    pub node_id: NodeId,
    pub status: EventStatus,
    pub output_signature: String,
    pub meters: CostAnnotation,
    pub cumulative_walltime_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<ExecEvent>,
    pub totals: CostAnnotation,
}

impl ExecutionTrace {
    pub fn walltime_ms(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.cumulative_walltime_ms)
    }

    /// Output signature per node.
    pub fn node_outputs(&self) -> BTreeMap<NodeId, String> {
        self.events.iter().map(|e| (e.node_id.clone(), e.output_signature.clone())).collect()
    }

    /// One JSON object per event, then `{"totals": ...}`.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&serde_json::json!({ "totals": self.totals }))?);
        out.push('\n');
        Ok(out)
    }
}

/// Executes `graph`, replaying reused nodes from the repository snapshot they cite.
pub fn execute(graph: &ReasoningGraph, executors: &ExecutorSet, seed: u64, view: &RepoView) -> Result<ExecutionTrace> {
    execute_with_replay(graph, executors, seed, view)
}

pub fn execute_with_replay(
    graph: &ReasoningGraph,
    executors: &ExecutorSet,
    seed: u64,
    replay: &dyn ReplaySource,
) -> Result<ExecutionTrace> {
    let violations = graph.validate();
    if !violations.is_empty() {
        return Err(GraphError::Invalid(violations).into());
    }
    if let Some(n) = graph.nodes().iter().find(|n| n.origin.is_none() && executors.get(n.kind).is_none()) {
        return Err(Error::MissingExecutor(n.kind.to_string()));
    }
    let mut outputs: HashMap<usize, String> = HashMap::with_capacity(graph.len());
    let mut trace = ExecutionTrace::default();
    let mut walltime = 0.0;
    for i in graph.topological_indices()? {
        let node = &graph.nodes()[i];
        let event = match &node.origin {
            Some(origin) => {
                let sig = replay.replay(origin).ok_or_else(|| Error::DanglingProvenance {
                    graph_id: origin.graph_id.clone(),
                    version: origin.version,
                    node_id: origin.node_id.clone(),
                })?;
                ExecEvent {
                    node_id: node.id.clone(),
                    status: EventStatus::Reused,
                    output_signature: sig,
                    meters: CostAnnotation::default(),
                    cumulative_walltime_ms: walltime,
                }
            }
            None => {
                let inputs: Vec<String> = graph.predecessors(i).iter().map(|p| outputs[p].clone()).collect();
                let exec = executors.get(node.kind).expect("checked above");
                let out = exec.execute(node, &inputs, seed).map_err(|e| match e {
                    Error::ExecutorFailure { .. } => e,
                    other => Error::ExecutorFailure {
                        node: node.id.clone(),
                        message: other.to_string(),
                    },
                })?;
                if !out.meters.is_valid() {
                    return Err(Error::ExecutorFailure {
                        node: node.id.clone(),
                        message: "executor reported invalid meters".into(),
                    });
                }
                walltime += out.meters.latency_ms;
                trace.totals.add(&out.meters);
                ExecEvent {
                    node_id: node.id.clone(),
                    status: EventStatus::Executed,
                    output_signature: out.output_signature,
                    meters: out.meters,
                    cumulative_walltime_ms: walltime,
                }
            }
        };
        outputs.insert(i, event.output_signature.clone());
        trace.events.push(event);
    }
    Ok(trace)
}
