//! Cold vs memoized runs over a task sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cost::{total_loss, CostCoefficients, LossBreakdown, ReuseRegion};
use crate::executor::{execute, ExecutionTrace, ExecutorSet, SimulatedProfile};
use crate::graph::{CostAnnotation, ReasoningGraph};
use crate::memo::{MemoEngine, Planner, ReusePolicy, StitchTrace, TaskSpec};
use crate::repository::{EntryContent, Store};
use crate::similarity::SimilarityConfig;
use crate::util::mix64;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cold,
    #[serde(alias = "memo")]
    Memoized,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(Mode::Cold),
            "memo" | "memoized" => Ok(Mode::Memoized),
            other => Err(Error::InvalidConfig(format!("mode must be cold or memo, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSettings {
    pub policy: ReusePolicy,
    pub coeffs: CostCoefficients,
    pub similarity: SimilarityConfig,
    pub latency_jitter_pct: f64,
    pub exec_seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            policy: ReusePolicy::default(),
            coeffs: CostCoefficients::default(),
            similarity: SimilarityConfig::default(),
            latency_jitter_pct: 0.0,
            exec_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task_id: String,
    pub mode: Mode,
    pub breakdown: LossBreakdown,
    pub rho_nodes: f64,
    pub rho_edges: f64,
    pub walltime_ms: f64,
    pub node_count: usize,
    pub reused_nodes: usize,
    pub reused_edges: usize,
    /// Meter totals measured by the executor.
    pub measured: CostAnnotation,
    #[serde(skip)]
    pub trace: Option<StitchTrace>,
    #[serde(skip)]
    pub execution: Option<ExecutionTrace>,
}

/// Means over a run's reports, excluding the first task (which has no history)
/// unless it is the only one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_cost: f64,
    pub mean_inconsistency: f64,
    pub mean_rho: f64,
    #[serde(rename = "mean_L")]
    pub mean_loss: f64,
}

pub fn summarize(reports: &[RunReport]) -> Summary {
    let tail = if reports.len() > 1 { &reports[1..] } else { reports };
    if tail.is_empty() {
        return Summary::default();
    }
    let n = tail.len() as f64;
    let mean = |f: &dyn Fn(&RunReport) -> f64| tail.iter().map(f).sum::<f64>() / n;
    Summary {
        mean_cost: mean(&|r| r.breakdown.cost()),
        mean_inconsistency: mean(&|r| r.breakdown.inconsistency),
        mean_rho: mean(&|r| r.rho_nodes),
        mean_loss: mean(&|r| r.breakdown.total),
    }
}

/// `(rho_nodes, rho_edges, reused nodes, reused edges)`. An edge counts as
/// reused when both endpoints lie in the same region.
pub fn reuse_ratios(graph: &ReasoningGraph, regions: &[ReuseRegion]) -> (f64, f64, usize, usize) {
    let nodes: usize = regions.iter().map(|r| r.nodes.len()).sum();
    let edges = graph
        .edges()
        .iter()
        .filter(|e| regions.iter().any(|r| r.nodes.contains(&e.src) && r.nodes.contains(&e.dst)))
        .count();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (ratio(nodes, graph.len()), ratio(edges, graph.edge_count()), nodes, edges)
}

/// Runs one task against the store's current contents and ingests the result.
pub fn run_task(
    index: usize,
    task: &TaskSpec,
    planner: &dyn Planner,
    store: &Store,
    settings: &ExperimentSettings,
    mode: Mode,
) -> Result<RunReport> {
    let view = store.snapshot();
    let plan = planner.plan(task)?;
    let cfg = settings.similarity.with_alpha(settings.policy.alpha);
    let (graph, regions, trace) = match mode {
        Mode::Cold => (plan, Vec::new(), None),
        Mode::Memoized => {
            let engine = MemoEngine::new(&view, &settings.policy, &settings.coeffs, &settings.similarity)?;
            let pool = engine.prepare(task, &plan)?;
            let trace = engine.memo(&pool)?;
            (trace.final_graph.clone(), trace.regions.clone(), Some(trace))
        }
    };
    let executors = ExecutorSet::simulated(SimulatedProfile {
        latency_jitter_pct: settings.latency_jitter_pct,
        seed: settings.exec_seed,
    })?;
    let exec = execute(&graph, &executors, mix64(settings.exec_seed ^ index as u64), &view)?;
    let breakdown = total_loss(&graph, &regions, &settings.coeffs, settings.policy.lambda, &view, &cfg)?;
    let (rho_nodes, rho_edges, reused_nodes, reused_edges) = reuse_ratios(&graph, &regions);

    let metrics: BTreeMap<String, f64> = [
        ("cost".to_string(), breakdown.cost()),
        ("inconsistency".to_string(), breakdown.inconsistency),
        ("total".to_string(), breakdown.total),
        ("rho_nodes".to_string(), rho_nodes),
        ("walltime_ms".to_string(), exec.walltime_ms()),
    ]
    .into();
    store.put(EntryContent {
        graph_id: task.id.clone(),
        graph: graph.clone(),
        task_embedding: task.demand.clone(),
        metrics,
        node_outputs: exec.node_outputs(),
    })?;
    Ok(RunReport {
        task_id: task.id.clone(),
        mode,
        breakdown,
        rho_nodes,
        rho_edges,
        walltime_ms: exec.walltime_ms(),
        node_count: graph.len(),
        reused_nodes,
        reused_edges,
        measured: exec.totals.clone(),
        trace,
        execution: Some(exec),
    })
}

/// Runs every task in order; each task sees the results of all earlier ones.
pub fn run_experiment(
    tasks: &[TaskSpec],
    planner: &dyn Planner,
    store: &Store,
    settings: &ExperimentSettings,
    mode: Mode,
) -> Result<Vec<RunReport>> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| run_task(i, t, planner, store, settings, mode))
        .collect()
}
