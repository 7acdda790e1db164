//! Candidate analysis and the stitching searches.
//!
//! A candidate's region and region similarity depend only on the plan and the
//! source, never on what else has been merged, so they are computed once per
//! task. The loss of a stitching state then needs only running sums:
//!
//! ```text
//! L = cold_cost - Σ_regions Σ_u (native(u) - c_retrieve) + λ · (1 - Σ w·s / Σ w)
//! ```
//!
//! with `w` the region size and `s` its similarity to the source.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use super::{
    Action, CandidateStatus, ConsideredCandidate, MatchCandidate, MemoEngine, MergeEvent, ReasonCode, StitchTrace,
    TaskSpec,
};
use crate::cost::{structural_cost, ReuseRegion};
use crate::embedding::cosine;
use crate::graph::{GraphError, NodeId, Provenance, ReasoningGraph, ReasoningNode};
use crate::repository::{QueryParams, TaskProbe};
use crate::similarity::{ged_prepared, similarity_prepared, PreparedGraph};
use crate::{Error, Result};

struct PoolCandidate {
    info: MatchCandidate,
    /// Plan positions, ascending.
    region: Vec<usize>,
    /// Plan position → source node.
    mapping: Vec<(usize, NodeId)>,
    savings: f64,
}

impl PoolCandidate {
    fn weight(&self) -> f64 {
        self.region.len() as f64
    }
}

/// Every plan node's analyzed candidates for one task against one snapshot.
pub struct CandidatePool {
    task_id: String,
    plan: ReasoningGraph,
    order: Vec<usize>,
    save: Vec<f64>,
    cold_cost: f64,
    /// Admissible candidates first, in retrieval order, then excluded ones.
    per_node: Vec<Vec<PoolCandidate>>,
}

#[derive(Clone)]
struct State {
    chosen: Vec<(usize, usize)>,
    covered: Vec<bool>,
    sum_save: f64,
    sum_w: f64,
    sum_ws: f64,
}

impl State {
    fn new(n: usize) -> Self {
        State {
            chosen: Vec::new(),
            covered: vec![false; n],
            sum_save: 0.0,
            sum_w: 0.0,
            sum_ws: 0.0,
        }
    }

    fn inconsistency(&self) -> f64 {
        if self.sum_w == 0.0 {
            0.0
        } else {
            (1.0 - self.sum_ws / self.sum_w).clamp(0.0, 1.0)
        }
    }
}

fn affinity(planned: &ReasoningNode, source: &ReasoningNode) -> f64 {
    if planned.kind == source.kind && planned.label == source.label {
        1.0
    } else {
        cosine(&planned.feature, &source.feature)
    }
}

impl CandidatePool {
    pub(super) fn build(engine: &MemoEngine<'_>, task: &TaskSpec, plan: &ReasoningGraph) -> Result<Self> {
        let violations = plan.validate();
        if !violations.is_empty() {
            return Err(GraphError::Invalid(violations).into());
        }
        let view = engine.view();
        for found in [plan.dim(), task.demand.len()] {
            if found != view.dim() {
                return Err(Error::DimensionMismatch {
                    expected: view.dim(),
                    found,
                });
            }
        }
        let coeffs = engine.coeffs();
        let save = plan
            .nodes()
            .iter()
            .map(|n| coeffs.native_node_cost(&n.meters) - coeffs.c_retrieve)
            .collect();
        let mut pool = CandidatePool {
            task_id: task.id.clone(),
            plan: plan.clone(),
            order: plan.topological_indices()?,
            save,
            cold_cost: structural_cost(plan, coeffs, &BTreeSet::new())?.total,
            per_node: Vec::with_capacity(plan.len()),
        };
        for v in 0..plan.len() {
            let cands = if view.is_empty() {
                Vec::new()
            } else {
                pool.analyze(engine, task, v)?
            };
            pool.per_node.push(cands);
        }
        Ok(pool)
    }

    fn analyze(&self, engine: &MemoEngine<'_>, task: &TaskSpec, v: usize) -> Result<Vec<PoolCandidate>> {
        let policy = engine.policy();
        let cfg = engine.similarity_config();
        let depth = policy.candidate_depth;
        let positions = self.plan.reachable_within(v, depth);
        let stub = self.plan.induced_by_positions(&positions);
        let root = positions.binary_search(&v).expect("root is reachable from itself");
        let stub_p = PreparedGraph::new(stub.clone());
        let probe = TaskProbe {
            embedding: task.demand.clone(),
            graph: Some(stub),
        };
        let params = QueryParams {
            top_k: policy.max_candidates_per_node.saturating_mul(2),
            tau_sim: policy.tau_sim,
            depth,
        };
        let results = engine.view().query(&probe, &params, cfg)?;

        let (mut admissible, mut excluded) = (Vec::new(), Vec::new());
        for r in results {
            let anchors = engine
                .view()
                .anchors(&r.graph_id, r.version, depth)
                .expect("query results come from the snapshot");
            let source = &anchors.iter().find(|a| a.node == r.anchor).expect("anchor exists").prepared;
            let anchor = source.graph().index_of(&r.anchor).expect("anchor in its own subgraph");
            let g = ged_prepared(&stub_p, source, &cfg.edit_costs, cfg.exact_ged_max_nodes, Some((root, anchor)));
            let sn = stub_p.graph().nodes();
            let cn = source.graph().nodes();
            let compatible = |i: usize, j: usize| policy.compatible(sn[i].kind, cn[j].kind);
            let qualifies =
                |i: usize| g.mapping[i].is_some_and(|j| compatible(i, j) && affinity(&sn[i], &cn[j]) >= policy.min_node_affinity);

            let mut reasons = Vec::new();
            if !compatible(root, anchor) {
                reasons.push(ReasonCode::TypeMismatch);
            } else if !qualifies(root) {
                reasons.push(ReasonCode::LowAffinity);
            }
            let mut info = MatchCandidate {
                result: r,
                delta_loss: None,
                admissible: reasons.is_empty(),
                reasons,
                region: BTreeSet::new(),
                mapping: BTreeMap::new(),
                region_similarity: 0.0,
            };
            if !info.admissible {
                excluded.push(PoolCandidate {
                    info,
                    region: Vec::new(),
                    mapping: Vec::new(),
                    savings: 0.0,
                });
                continue;
            }

            // Region: qualifying stub nodes reachable from the root through qualifying nodes.
            let mut in_region = vec![false; sn.len()];
            in_region[root] = true;
            let mut stack = vec![root];
            while let Some(u) = stack.pop() {
                for &w in stub_p.graph().successors(u) {
                    if !in_region[w] && qualifies(w) {
                        in_region[w] = true;
                        stack.push(w);
                    }
                }
            }
            let local: Vec<usize> = (0..sn.len()).filter(|&i| in_region[i]).collect();
            let region_graph = PreparedGraph::new(stub_p.graph().induced_by_positions(&local));
            info.region_similarity = similarity_prepared(&region_graph, source, cfg)?.score;
            let mut mapping = Vec::with_capacity(local.len());
            for &i in &local {
                let j = g.mapping[i].expect("region nodes are mapped");
                info.region.insert(sn[i].id.clone());
                info.mapping.insert(sn[i].id.clone(), cn[j].id.clone());
                mapping.push((positions[i], cn[j].id.clone()));
            }
            let region: Vec<usize> = local.iter().map(|&i| positions[i]).collect();
            let savings = region.iter().map(|&p| self.save[p]).sum();
            admissible.push(PoolCandidate {
                info,
                region,
                mapping,
                savings,
            });
        }
        admissible.truncate(policy.max_candidates_per_node);
        admissible.extend(excluded);
        Ok(admissible)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    /// The cold plan.
    pub fn plan(&self) -> &ReasoningGraph {
        &self.plan
    }

    /// Plan positions in the order stitching visits them.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Admissible candidates at plan position `v`, in tie-break order.
    pub fn admissible(&self, v: usize) -> impl Iterator<Item = &MatchCandidate> {
        self.per_node[v].iter().map(|c| &c.info).filter(|c| c.admissible)
    }

    /// Candidates at `v` with loss changes measured against the cold plan.
    pub fn match_candidates(&self, v: usize, lambda: f64) -> Vec<MatchCandidate> {
        let empty = State::new(self.plan.len());
        self.per_node[v]
            .iter()
            .enumerate()
            .map(|(c, pc)| {
                let mut info = pc.info.clone();
                if info.admissible {
                    info.delta_loss = Some(self.delta(&empty, v, c, lambda));
                }
                info
            })
            .collect()
    }

    fn loss(&self, s: &State, lambda: f64) -> f64 {
        self.cold_cost - s.sum_save + lambda * s.inconsistency()
    }

    fn apply(&self, s: &mut State, v: usize, c: usize) {
        let pc = &self.per_node[v][c];
        for &p in &pc.region {
            s.covered[p] = true;
        }
        s.sum_save += pc.savings;
        s.sum_w += pc.weight();
        s.sum_ws += pc.weight() * pc.info.region_similarity;
        s.chosen.push((v, c));
    }

    fn delta(&self, s: &State, v: usize, c: usize, lambda: f64) -> f64 {
        let mut next = s.clone();
        self.apply(&mut next, v, c);
        self.loss(&next, lambda) - self.loss(s, lambda)
    }

    fn overlaps(&self, s: &State, v: usize, c: usize) -> bool {
        self.per_node[v][c].region.iter().any(|&p| s.covered[p])
    }

    /// `(candidate, ΔL)` for every admissible, non-overlapping candidate at `v`.
    fn feasible(&self, s: &State, v: usize, lambda: f64) -> Vec<(usize, f64)> {
        (0..self.per_node[v].len())
            .filter(|&c| self.per_node[v][c].info.admissible && !self.overlaps(s, v, c))
            .map(|c| (c, self.delta(s, v, c, lambda)))
            .collect()
    }

    /// Lowest ΔL, ties going to the earlier (higher-scoring) candidate, if it clears the margin.
    fn greedy_choice(feasible: &[(usize, f64)], tau: f64) -> Option<usize> {
        feasible
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .filter(|(_, d)| *d < -tau)
            .map(|(c, _)| *c)
    }

    fn record(&self, s: &State, v: usize, pass: usize, decision: Option<usize>, lambda: f64, tau: f64) -> MergeEvent {
        let before = self.loss(s, lambda);
        let candidates = self.per_node[v]
            .iter()
            .enumerate()
            .map(|(c, pc)| {
                let (status, delta_loss, reasons) = if !pc.info.admissible {
                    (CandidateStatus::Inadmissible, None, pc.info.reasons.clone())
                } else if self.overlaps(s, v, c) {
                    (CandidateStatus::Inadmissible, None, vec![ReasonCode::Overlap])
                } else {
                    let d = self.delta(s, v, c, lambda);
                    let status = if decision == Some(c) {
                        CandidateStatus::Accepted
                    } else if d < -tau {
                        CandidateStatus::Superseded
                    } else {
                        CandidateStatus::Rejected
                    };
                    (status, Some(d), Vec::new())
                };
                ConsideredCandidate {
                    source: pc.info.source(),
                    score: pc.info.result.score,
                    delta_loss,
                    status,
                    reasons,
                }
            })
            .collect();
        let (action, source, after) = match decision {
            Some(c) => {
                let mut next = s.clone();
                self.apply(&mut next, v, c);
                (Action::Reuse, Some(self.per_node[v][c].info.source()), self.loss(&next, lambda))
            }
            None => (Action::Generate, None, before),
        };
        MergeEvent {
            pass,
            node: self.plan.nodes()[v].id.clone(),
            action,
            source,
            loss_before: before,
            loss_after: after,
            candidates,
        }
    }

    /// One greedy sweep; returns whether anything merged.
    fn sweep(&self, s: &mut State, pass: usize, lambda: f64, tau: f64, events: &mut Vec<MergeEvent>) -> bool {
        let mut merged = false;
        for &v in &self.order {
            if s.covered[v] {
                continue;
            }
            let choice = Self::greedy_choice(&self.feasible(s, v, lambda), tau);
            events.push(self.record(s, v, pass, choice, lambda, tau));
            if let Some(c) = choice {
                self.apply(s, v, c);
                merged = true;
            }
        }
        merged
    }

    /// Greedy sweeps from `first_pass` until one merges nothing. Returns the pass count so far.
    fn stabilize(&self, s: &mut State, first_pass: usize, lambda: f64, tau: f64, events: &mut Vec<MergeEvent>) -> usize {
        let mut pass = first_pass;
        loop {
            let merged = self.sweep(s, pass, lambda, tau, events);
            pass += 1;
            if !merged {
                return pass;
            }
        }
    }

    pub(super) fn greedy(&self, engine: &MemoEngine<'_>, lambda: f64, tau: f64) -> Result<StitchTrace> {
        let mut s = State::new(self.plan.len());
        let mut events = Vec::new();
        let passes = self.stabilize(&mut s, 0, lambda, tau, &mut events);
        engine.finish(self, "greedy", 1, lambda, tau, events, passes, &s.chosen)
    }

    /// Beam search over the first sweep's decisions. Each hypothesis branches at
    /// its next uncovered node into "generate" and every candidate that clears
    /// the margin; hypotheses are ranked by loss (remaining nodes priced
    /// natively), then by decision sequence. The greedy hypothesis always
    /// survives pruning. Survivors are finished with greedy sweeps and the
    /// lowest final loss wins, greedy first on ties.
    pub(super) fn beam(&self, engine: &MemoEngine<'_>, lambda: f64, tau: f64, width: usize) -> Result<StitchTrace> {
        #[derive(Clone)]
        struct Hyp {
            state: State,
            pos: usize,
            decisions: Vec<u32>,
            greedy: bool,
        }
        let n = self.plan.len();
        let rank = |a: &Hyp, b: &Hyp| -> Ordering {
            self.loss(&a.state, lambda)
                .total_cmp(&self.loss(&b.state, lambda))
                .then_with(|| a.decisions.cmp(&b.decisions))
        };
        let mut beam = vec![Hyp {
            state: State::new(n),
            pos: 0,
            decisions: Vec::new(),
            greedy: true,
        }];
        loop {
            let mut expanded = false;
            let mut next: Vec<Hyp> = Vec::new();
            for mut h in beam {
                while h.pos < n && h.state.covered[self.order[h.pos]] {
                    h.pos += 1;
                }
                if h.pos == n {
                    next.push(h);
                    continue;
                }
                expanded = true;
                let v = self.order[h.pos];
                let feasible = self.feasible(&h.state, v, lambda);
                let greedy = Self::greedy_choice(&feasible, tau);
                let mut generate = h.clone();
                generate.pos += 1;
                generate.decisions.push(0);
                generate.greedy = h.greedy && greedy.is_none();
                next.push(generate);
                for &(c, d) in &feasible {
                    if d < -tau {
                        let mut child = h.clone();
                        self.apply(&mut child.state, v, c);
                        child.pos += 1;
                        child.decisions.push(c as u32 + 1);
                        child.greedy = h.greedy && greedy == Some(c);
                        next.push(child);
                    }
                }
            }
            if !expanded {
                beam = next;
                break;
            }
            // Paths reaching the same state at the same position are interchangeable.
            let mut seen: BTreeMap<(Vec<(usize, usize)>, usize), usize> = BTreeMap::new();
            let mut unique: Vec<Hyp> = Vec::new();
            for h in next {
                let mut key = h.state.chosen.clone();
                key.sort_unstable();
                match seen.get(&(key.clone(), h.pos)) {
                    Some(&i) => {
                        let keep = &unique[i];
                        if (h.greedy && !keep.greedy) || (h.greedy == keep.greedy && h.decisions < keep.decisions) {
                            unique[i] = h;
                        }
                    }
                    None => {
                        seen.insert((key, h.pos), unique.len());
                        unique.push(h);
                    }
                }
            }
            unique.sort_by(rank);
            if unique.len() > width {
                let greedy = unique.iter().position(|h| h.greedy);
                match greedy {
                    Some(g) if g >= width => {
                        let gh = unique.swap_remove(g);
                        unique.truncate(width - 1);
                        unique.push(gh);
                        unique.sort_by(rank);
                    }
                    _ => unique.truncate(width),
                }
            }
            beam = unique;
        }

        let mut best: Option<(f64, bool, Vec<u32>)> = None;
        for h in &beam {
            let mut s = h.state.clone();
            self.stabilize(&mut s, 1, lambda, tau, &mut Vec::new());
            let key = (self.loss(&s, lambda), h.greedy, h.decisions.clone());
            let better = match &best {
                None => true,
                Some((l, g, d)) => match key.0.total_cmp(l) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => (key.1 && !g) || (key.1 == *g && key.2 < *d),
                },
            };
            if better {
                best = Some(key);
            }
        }
        let decisions = best.map(|b| b.2).unwrap_or_default();

        // Replay the winning first sweep to produce its events, then finish it.
        let mut s = State::new(n);
        let mut events = Vec::new();
        let mut next_decision = decisions.iter();
        for &v in &self.order {
            if s.covered[v] {
                continue;
            }
            let d = *next_decision.next().expect("one decision per visited node");
            let choice = (d as usize).checked_sub(1);
            events.push(self.record(&s, v, 0, choice, lambda, tau));
            if let Some(c) = choice {
                self.apply(&mut s, v, c);
            }
        }
        let passes = self.stabilize(&mut s, 1, lambda, tau, &mut events);
        engine.finish(self, "beam", width, lambda, tau, events, passes, &s.chosen)
    }

    /// Builds the stitched graph and its regions from chosen `(node, candidate)` pairs.
    pub(super) fn stitch(&self, chosen: &[(usize, usize)], depth: usize) -> Result<(ReasoningGraph, Vec<ReuseRegion>)> {
        let mut g = self.plan.clone();
        let mut regions = Vec::with_capacity(chosen.len());
        for &(v, c) in chosen {
            let pc = &self.per_node[v][c];
            for (p, src) in &pc.mapping {
                let origin = Provenance {
                    graph_id: pc.info.result.graph_id.clone(),
                    version: pc.info.result.version,
                    node_id: src.clone(),
                };
                g.set_origin(&self.plan.nodes()[*p].id, Some(origin))?;
            }
            regions.push(pc.info.to_region(depth));
        }
        Ok((g, regions))
    }

    fn state_of(&self, regions: &[ReuseRegion]) -> Option<State> {
        let mut s = State::new(self.plan.len());
        for r in regions {
            let (v, c) = (0..self.per_node.len()).find_map(|v| {
                self.per_node[v]
                    .iter()
                    .position(|pc| pc.info.admissible && pc.info.region == r.nodes && pc.info.source() == r.source)
                    .map(|c| (v, c))
            })?;
            if self.overlaps(&s, v, c) {
                return None;
            }
            self.apply(&mut s, v, c);
        }
        Some(s)
    }

    /// Re-scans a finished stitching: true when no admissible, non-overlapping
    /// candidate at any uncovered node clears the margin. `None` when the
    /// regions did not come from this pool.
    pub fn is_pi_stable(&self, regions: &[ReuseRegion], lambda: f64, tau: f64) -> Option<bool> {
        let s = self.state_of(regions)?;
        Some(
            (0..self.plan.len())
                .filter(|&v| !s.covered[v])
                .all(|v| self.feasible(&s, v, lambda).iter().all(|&(_, d)| d >= -tau)),
        )
    }

    /// Loss of the stitching given by `regions` under the pool's bookkeeping.
    pub fn fast_loss(&self, regions: &[ReuseRegion], lambda: f64) -> Option<f64> {
        Some(self.loss(&self.state_of(regions)?, lambda))
    }
}
