//! Memoized planning: stitch retrieved subgraphs into a cold plan.
//!
//! For every plan node the engine retrieves candidate source subgraphs and
//! works out which plan nodes each one could stand in for (its *region*).
//! Reusing a region swaps its native cost for retrieval cost and adds a
//! fidelity penalty. Greedy stitching walks the plan in topological order
//! and merges the best candidate whenever it lowers the loss by more than
//! `tau_margin`; beam stitching explores alternatives and always keeps the
//! greedy path alive, so it is never worse.

mod search;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cost::{total_loss, CostCoefficients, LossBreakdown, ReuseRegion, SourceRef};
use crate::graph::{NodeId, NodeKind, ReasoningGraph};
use crate::repository::{QueryResult, RepoView};
use crate::similarity::SimilarityConfig;
use crate::util::extended_f64;
use crate::{Error, Result};

pub use search::CandidatePool;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReusePolicy {
    pub alpha: f64,
    pub lambda: f64,
    /// Retrieval threshold on similarity.
    pub tau_sim: f64,
    /// A merge must lower the loss by more than this. May be `"inf"`.
    #[serde(with = "extended_f64")]
    pub tau_margin: f64,
    pub beam_width: usize,
    pub max_candidates_per_node: usize,
    pub candidate_depth: usize,
    /// Kinds allowed to stand in for each planned kind; unlisted kinds only match themselves.
    pub type_compat: BTreeMap<NodeKind, BTreeSet<NodeKind>>,
    pub pin_versions: bool,
    /// Minimum per-node feature cosine for a mapped node to join a region.
    pub min_node_affinity: f64,
}

impl Default for ReusePolicy {
    fn default() -> Self {
        ReusePolicy {
            alpha: 0.5,
            lambda: 1.0,
            tau_sim: 0.6,
            tau_margin: 0.0,
            beam_width: 1,
            max_candidates_per_node: 4,
            candidate_depth: 3,
            type_compat: BTreeMap::new(),
            pin_versions: true,
            min_node_affinity: 0.9,
        }
    }
}

impl ReusePolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.tau_sim) {
            return bad(format!("tau_sim must lie in [0,1], got {}", self.tau_sim));
        }
        if self.tau_margin.is_nan() || self.tau_margin < 0.0 {
            return bad(format!("tau_margin must be >= 0, got {}", self.tau_margin));
        }
        if self.beam_width == 0 {
            return bad("beam_width must be >= 1".into());
        }
        if self.max_candidates_per_node == 0 {
            return bad("max_candidates_per_node must be >= 1".into());
        }
        if self.candidate_depth == 0 {
            return bad("candidate_depth must be >= 1".into());
        }
        if !self.pin_versions {
            return bad("pin_versions must be true: reuse always cites an exact version".into());
        }
        if !(0.0..=1.0).contains(&self.min_node_affinity) {
            return bad(format!("min_node_affinity must lie in [0,1], got {}", self.min_node_affinity));
        }
        for (kind, allowed) in &self.type_compat {
            if !allowed.contains(kind) {
                return bad(format!("type_compat[{kind}] must contain {kind} itself"));
            }
        }
        Ok(())
    }

    /// May a source node of kind `source` replace a planned node of kind `planned`?
    pub fn compatible(&self, planned: NodeKind, source: NodeKind) -> bool {
        self.type_compat.get(&planned).map_or(planned == source, |s| s.contains(&source))
    }
}

/// A task to plan for. `demand` is the embedding of `description`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub description: String,
    pub demand: Vec<f64>,
    pub family: String,
    pub seed: u64,
}

/// Produces the cold (fully native) plan for a task.
pub trait Planner {
    fn plan(&self, task: &TaskSpec) -> Result<ReasoningGraph>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    /// The anchor's kind is not an allowed replacement for the planned node's kind.
    TypeMismatch,
    /// The anchor is kind-compatible but its content is too far from the planned node.
    LowAffinity,
    /// The candidate's region intersects nodes already covered by another reuse.
    Overlap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub result: QueryResult,
    /// Loss change if this candidate alone were merged into the cold plan.
    pub delta_loss: Option<f64>,
    pub admissible: bool,
    pub reasons: Vec<ReasonCode>,
    /// Plan nodes the candidate would replace.
    pub region: BTreeSet<NodeId>,
    /// Source node replacing each region node.
    pub mapping: BTreeMap<NodeId, NodeId>,
    /// Similarity of the region to the source subgraph.
    pub region_similarity: f64,
}

impl MatchCandidate {
    pub fn source(&self) -> SourceRef {
        SourceRef {
            graph_id: self.result.graph_id.clone(),
            version: self.result.version,
            anchor: self.result.anchor.clone(),
        }
    }

    pub fn to_region(&self, depth: usize) -> ReuseRegion {
        ReuseRegion {
            nodes: self.region.clone(),
            source: self.source(),
            depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Reuse,
    Generate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateStatus {
    /// Merged.
    Accepted,
    /// Passed the margin gate but another choice was taken.
    Superseded,
    /// Failed the margin gate.
    Rejected,
    /// Not eligible in this state; see reasons.
    Inadmissible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsideredCandidate {
    pub source: SourceRef,
    pub score: f64,
    pub delta_loss: Option<f64>,
    pub status: CandidateStatus,
    pub reasons: Vec<ReasonCode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    /// Sweep over the plan that produced the event; the last sweep merges nothing.
    pub pass: usize,
    pub node: NodeId,
    pub action: Action,
    pub source: Option<SourceRef>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub candidates: Vec<ConsideredCandidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchTrace {
    pub task_id: String,
    pub strategy: String,
    pub beam_width: usize,
    #[serde(with = "extended_f64")]
    pub tau_margin: f64,
    pub events: Vec<MergeEvent>,
    /// Number of sweeps over the plan; the last one merged nothing.
    pub passes: usize,
    pub final_graph: ReasoningGraph,
    pub regions: Vec<ReuseRegion>,
    pub loss: LossBreakdown,
    pub cold_loss: LossBreakdown,
}

impl StitchTrace {
    pub fn reused_nodes(&self) -> BTreeSet<NodeId> {
        self.regions.iter().flat_map(|r| r.nodes.iter().cloned()).collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }
}

/// Checks a trace against the stitching contract: accepted merges pass the
/// margin gate and strictly lower the loss, losses chain from event to event,
/// and the last sweep merges nothing (no candidate left that passes the gate).
pub fn verify_monotone(trace: &StitchTrace) -> bool {
    let tau = trace.tau_margin;
    if trace.passes == 0 {
        return trace.events.is_empty();
    }
    let last_pass = Some(trace.passes - 1);
    if trace.events.iter().any(|e| e.pass >= trace.passes) {
        return false;
    }
    let mut current: Option<f64> = None;
    for e in &trace.events {
        if let Some(c) = current {
            if e.loss_before != c {
                return false;
            }
        }
        match e.action {
            Action::Reuse => {
                if e.loss_after.partial_cmp(&e.loss_before) != Some(std::cmp::Ordering::Less) || Some(e.pass) == last_pass {
                    return false;
                }
                let accepted: Vec<_> = e.candidates.iter().filter(|c| c.status == CandidateStatus::Accepted).collect();
                if accepted.len() != 1 || Some(&accepted[0].source) != e.source.as_ref() {
                    return false;
                }
            }
            Action::Generate => {
                if e.loss_after != e.loss_before || e.source.is_some() {
                    return false;
                }
                if e.candidates.iter().any(|c| c.status == CandidateStatus::Accepted) {
                    return false;
                }
            }
        }
        if !gate_respected(e, tau) {
            return false;
        }
        if Some(e.pass) == last_pass && e.candidates.iter().any(|c| c.status == CandidateStatus::Superseded) {
            return false;
        }
        current = Some(e.loss_after);
    }
    true
}

/// Every accepted or superseded candidate has `ΔL < -tau`, every rejected one `ΔL >= -tau`.
pub fn gate_respected(event: &MergeEvent, tau_margin: f64) -> bool {
    event.candidates.iter().all(|c| match (c.status, c.delta_loss) {
        (CandidateStatus::Accepted | CandidateStatus::Superseded, Some(d)) => d < -tau_margin,
        (CandidateStatus::Rejected, Some(d)) => d >= -tau_margin,
        (CandidateStatus::Inadmissible, _) => !c.reasons.is_empty(),
        _ => false,
    })
}

/// Stitching engine bound to one repository snapshot and one configuration.
pub struct MemoEngine<'a> {
    view: &'a RepoView,
    policy: ReusePolicy,
    coeffs: CostCoefficients,
    cfg: SimilarityConfig,
}

impl<'a> MemoEngine<'a> {
    /// The similarity blend weight is taken from `policy.alpha`.
    pub fn new(view: &'a RepoView, policy: &ReusePolicy, coeffs: &CostCoefficients, cfg: &SimilarityConfig) -> Result<Self> {
        policy.validate()?;
        coeffs.validate()?;
        let cfg = cfg.with_alpha(policy.alpha);
        cfg.validate()?;
        Ok(MemoEngine {
            view,
            policy: policy.clone(),
            coeffs: *coeffs,
            cfg,
        })
    }

    pub fn policy(&self) -> &ReusePolicy {
        &self.policy
    }

    pub fn similarity_config(&self) -> &SimilarityConfig {
        &self.cfg
    }

    pub fn view(&self) -> &RepoView {
        self.view
    }

    /// Retrieves and analyzes candidates for every node of `plan`.
    pub fn prepare(&self, task: &TaskSpec, plan: &ReasoningGraph) -> Result<CandidatePool> {
        CandidatePool::build(self, task, plan)
    }

    pub fn greedy(&self, pool: &CandidatePool) -> Result<StitchTrace> {
        pool.greedy(self, self.policy.lambda, self.policy.tau_margin)
    }

    pub fn beam(&self, pool: &CandidatePool, width: usize) -> Result<StitchTrace> {
        if width == 0 {
            return Err(Error::InvalidConfig("beam_width must be >= 1".into()));
        }
        pool.beam(self, self.policy.lambda, self.policy.tau_margin, width)
    }

    /// Greedy when `beam_width` is 1, otherwise beam search.
    pub fn memo(&self, pool: &CandidatePool) -> Result<StitchTrace> {
        if self.policy.beam_width == 1 {
            self.greedy(pool)
        } else {
            self.beam(pool, self.policy.beam_width)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn finish(
        &self,
        pool: &CandidatePool,
        strategy: &str,
        width: usize,
        lambda: f64,
        tau_margin: f64,
        events: Vec<MergeEvent>,
        passes: usize,
        chosen: &[(usize, usize)],
    ) -> Result<StitchTrace> {
        let (final_graph, regions) = pool.stitch(chosen, self.policy.candidate_depth)?;
        let loss = total_loss(&final_graph, &regions, &self.coeffs, lambda, self.view, &self.cfg)?;
        let cold_loss = total_loss(pool.plan(), &[], &self.coeffs, lambda, self.view, &self.cfg)?;
        Ok(StitchTrace {
            task_id: pool.task_id().to_string(),
            strategy: strategy.into(),
            beam_width: width,
            tau_margin,
            events,
            passes,
            final_graph,
            regions,
            loss,
            cold_loss,
        })
    }

    pub(crate) fn coeffs(&self) -> &CostCoefficients {
        &self.coeffs
    }
}

/// Candidates for plan node `v`, each annotated with its loss change against the cold plan.
/// Admissible candidates come first (at most `max_candidates_per_node`), then the excluded ones.
pub fn find_candidates(
    v: &str,
    task: &TaskSpec,
    plan: &ReasoningGraph,
    view: &RepoView,
    policy: &ReusePolicy,
    coeffs: &CostCoefficients,
    cfg: &SimilarityConfig,
) -> Result<Vec<MatchCandidate>> {
    let engine = MemoEngine::new(view, policy, coeffs, cfg)?;
    let pos = plan.index_of(v).ok_or_else(|| crate::GraphError::UnknownNode(v.to_string()))?;
    let pool = CandidatePool::build(&engine, task, plan)?;
    Ok(pool.match_candidates(pos, policy.lambda))
}

/// `L(plan with regions + candidate) - L(plan with regions)`, evaluated with [`total_loss`].
#[allow(clippy::too_many_arguments)]
pub fn delta_loss(
    plan: &ReasoningGraph,
    regions: &[ReuseRegion],
    candidate: &MatchCandidate,
    policy: &ReusePolicy,
    coeffs: &CostCoefficients,
    view: &RepoView,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    let cfg = cfg.with_alpha(policy.alpha);
    let before = total_loss(plan, regions, coeffs, policy.lambda, view, &cfg)?;
    let mut with = regions.to_vec();
    with.push(candidate.to_region(policy.candidate_depth));
    let after = total_loss(plan, &with, coeffs, policy.lambda, view, &cfg)?;
    Ok(after.total - before.total)
}

pub fn greedy_stitch(
    task: &TaskSpec,
    planner: &dyn Planner,
    view: &RepoView,
    policy: &ReusePolicy,
    coeffs: &CostCoefficients,
    cfg: &SimilarityConfig,
) -> Result<StitchTrace> {
    let engine = MemoEngine::new(view, policy, coeffs, cfg)?;
    let pool = engine.prepare(task, &planner.plan(task)?)?;
    engine.greedy(&pool)
}

pub fn beam_stitch(
    task: &TaskSpec,
    planner: &dyn Planner,
    view: &RepoView,
    policy: &ReusePolicy,
    coeffs: &CostCoefficients,
    cfg: &SimilarityConfig,
) -> Result<StitchTrace> {
    let engine = MemoEngine::new(view, policy, coeffs, cfg)?;
    let pool = engine.prepare(task, &planner.plan(task)?)?;
    engine.beam(&pool, policy.beam_width)
}

pub fn memo(
    task: &TaskSpec,
    planner: &dyn Planner,
    view: &RepoView,
    policy: &ReusePolicy,
    coeffs: &CostCoefficients,
    cfg: &SimilarityConfig,
) -> Result<StitchTrace> {
    let engine = MemoEngine::new(view, policy, coeffs, cfg)?;
    let pool = engine.prepare(task, &planner.plan(task)?)?;
    engine.memo(&pool)
}
