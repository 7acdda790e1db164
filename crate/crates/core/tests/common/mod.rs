//! Generators and brute-force oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use memograph::cost::{total_loss, CostCoefficients, ReuseRegion};
use memograph::embedding::EmbeddingSpec;
use memograph::graph::{CostAnnotation, EdgeKind, NodeKind, ReasoningEdge, ReasoningGraph, ReasoningNode};
use memograph::memo::{CandidatePool, MatchCandidate, ReusePolicy, TaskSpec};
use memograph::repository::{EntryContent, RepoView, Store};
use memograph::similarity::{EditCosts, SimilarityConfig};
use rand::seq::SliceRandom;
use rand::Rng;

/// Feature vector for a small label alphabet: one-hot, so distinct labels are orthogonal.
pub fn onehot(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i % dim] = 1.0;
    v
}

/// Random DAG over `1..=max_nodes` nodes. Edges only run from lower to higher
/// position, so the result is always acyclic.
pub fn random_dag<R: Rng>(rng: &mut R, max_nodes: usize, kinds: &[NodeKind], labels: &[&str], edge_kinds: &[EdgeKind]) -> ReasoningGraph {
    let n = rng.gen_range(1..=max_nodes);
    let dim = labels.len().max(2);
    let mut g = ReasoningGraph::new(dim);
    for i in 0..n {
        let l = rng.gen_range(0..labels.len());
        let kind = *kinds.choose(rng).unwrap();
        let meters = CostAnnotation::new(rng.gen_range(0..2000), rng.gen_range(0..4), rng.gen_range(0.0..1000.0));
        g.add_node(ReasoningNode::new(format!("v{i}"), kind, labels[l], onehot(dim, l)).with_meters(meters))
            .unwrap();
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.4) {
                let kind = *edge_kinds.choose(rng).unwrap();
                g.add_edge(ReasoningEdge::new(format!("v{i}"), format!("v{j}"), kind)).unwrap();
            }
        }
    }
    g
}

fn edge_set(g: &ReasoningGraph) -> BTreeSet<(usize, usize, EdgeKind)> {
    g.edges()
        .iter()
        .map(|e| (g.index_of(&e.src).unwrap(), g.index_of(&e.dst).unwrap(), e.kind))
        .collect()
}

fn sub_cost(u: &ReasoningNode, v: &ReasoningNode, c: &EditCosts) -> f64 {
    if u.kind != v.kind {
        c.node_relabel
    } else if u.label == v.label {
        0.0
    } else {
        let dot: f64 = u.feature.iter().zip(&v.feature).map(|(x, y)| x * y).sum();
        let nu = u.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = if nu == 0.0 || nv == 0.0 { 0.0 } else { dot / (nu * nv) };
        c.node_relabel * (1.0 - cos).clamp(0.0, 1.0)
    }
}

/// Edit distance by enumerating every partial injective node map from `a` into `b`.
pub fn exhaustive_ged(a: &ReasoningGraph, b: &ReasoningGraph, c: &EditCosts) -> f64 {
    let (ea, eb) = (edge_set(a), edge_set(b));
    let mut best = f64::INFINITY;
    let mut map: Vec<Option<usize>> = vec![None; a.len()];
    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        a: &ReasoningGraph,
        b: &ReasoningGraph,
        ea: &BTreeSet<(usize, usize, EdgeKind)>,
        eb: &BTreeSet<(usize, usize, EdgeKind)>,
        c: &EditCosts,
        best: &mut f64,
    ) {
        if i == a.len() {
            let mut cost = 0.0;
            for (k, m) in map.iter().enumerate() {
                cost += match m {
                    Some(j) => sub_cost(&a.nodes()[k], &b.nodes()[*j], c),
                    None => c.node_delete,
                };
            }
            cost += used.iter().filter(|u| !**u).count() as f64 * c.node_insert;
            // Edges of `a` that survive the map, expressed in `b`'s positions.
            let carried: BTreeSet<(usize, usize, EdgeKind)> = ea
                .iter()
                .filter_map(|&(s, d, k)| Some((map[s]?, map[d]?, k)))
                .collect();
            let deleted = ea.len() - carried.iter().filter(|e| eb.contains(e)).count();
            let inserted = eb.iter().filter(|e| !carried.contains(e)).count();
            cost += deleted as f64 * c.edge_delete + inserted as f64 * c.edge_insert;
            if cost < *best {
                *best = cost;
            }
            return;
        }
        map[i] = None;
        rec(i + 1, map, used, a, b, ea, eb, c, best);
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                map[i] = Some(j);
                rec(i + 1, map, used, a, b, ea, eb, c, best);
                used[j] = false;
                map[i] = None;
            }
        }
    }
    let mut used = vec![false; b.len()];
    rec(0, &mut map, &mut used, a, b, &ea, &eb, c, &mut best);
    best
}

/// Minimum loss over every stitching the policy can reach: every set of
/// pairwise disjoint admissible candidates that can be merged in *some* order
/// with each merge clearing the margin. Losses are evaluated from scratch.
pub fn brute_force_loss(
    pool: &CandidatePool,
    view: &RepoView,
    policy: &ReusePolicy,
    coeffs: &CostCoefficients,
    cfg: &SimilarityConfig,
) -> f64 {
    let cfg = cfg.with_alpha(policy.alpha);
    let plan = pool.plan();
    let cands: Vec<MatchCandidate> = (0..plan.len())
        .flat_map(|v| pool.match_candidates(v, policy.lambda))
        .filter(|c| c.admissible)
        .collect();
    let loss = |set: &[usize]| {
        let regions: Vec<ReuseRegion> = set.iter().map(|&i| cands[i].to_region(policy.candidate_depth)).collect();
        total_loss(plan, &regions, coeffs, policy.lambda, view, &cfg).unwrap().total
    };
    // Depth-first over merge sequences; states are canonical sorted sets.
    let mut best = loss(&[]);
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut stack = vec![Vec::<usize>::new()];
    while let Some(set) = stack.pop() {
        let here = loss(&set);
        best = best.min(here);
        let covered: BTreeSet<&String> = set.iter().flat_map(|&i| cands[i].region.iter()).collect();
        for (i, c) in cands.iter().enumerate() {
            if set.contains(&i) || c.region.iter().any(|n| covered.contains(n)) {
                continue;
            }
            let mut next = set.clone();
            next.push(i);
            next.sort_unstable();
            if seen.contains(&next) {
                continue;
            }
            if loss(&next) - here < -policy.tau_margin {
                seen.insert(next.clone());
                stack.push(next);
            }
        }
    }
    best
}

pub fn spec_for(dim: usize) -> EmbeddingSpec {
    EmbeddingSpec {
        dim,
        ..EmbeddingSpec::default()
    }
}

/// A small stitching instance: a plan of at most five nodes and up to four
/// prior graphs derived from it by relabeling, dropping and extending nodes.
pub struct SmallInstance {
    pub store: Store,
    pub task: TaskSpec,
    pub plan: ReasoningGraph,
    pub policy: ReusePolicy,
    pub coeffs: CostCoefficients,
}

pub fn small_instance<R: Rng>(rng: &mut R) -> SmallInstance {
    const LABELS: [&str; 6] = ["scan", "join", "rank", "plot", "merge", "score"];
    let kinds = [NodeKind::SqlCte, NodeKind::Aggregate];
    let plan = random_dag(rng, 5, &kinds, &LABELS, &[EdgeKind::Dataflow]);
    let dim = plan.dim();
    let store = Store::in_memory(spec_for(dim));
    let demand = onehot(dim, 0);
    for p in 0..rng.gen_range(1..=4) {
        let mut g = ReasoningGraph::new(dim);
        let keep: Vec<bool> = (0..plan.len()).map(|_| rng.gen_bool(0.75)).collect();
        for (i, n) in plan.nodes().iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let mut n = n.clone();
            if rng.gen_bool(0.25) {
                let l = rng.gen_range(0..LABELS.len());
                n.label = LABELS[l].into();
                n.feature = onehot(dim, l);
            }
            g.add_node(n).unwrap();
        }
        for e in plan.edges() {
            if g.contains(&e.src) && g.contains(&e.dst) && rng.gen_bool(0.85) {
                g.add_edge(e.clone()).unwrap();
            }
        }
        if rng.gen_bool(0.5) {
            let l = rng.gen_range(0..LABELS.len());
            g.add_node(ReasoningNode::new("extra", NodeKind::SqlCte, LABELS[l], onehot(dim, l))).unwrap();
            if let Some(first) = g.nodes().first().map(|n| n.id.clone()).filter(|id| id != "extra") {
                g.add_edge(ReasoningEdge::new(first, "extra", EdgeKind::Dataflow)).unwrap();
            }
        }
        if g.is_empty() {
            continue;
        }
        store
            .put(EntryContent {
                graph_id: format!("prior{p}"),
                graph: g,
                task_embedding: demand.clone(),
                ..EntryContent::default()
            })
            .unwrap();
    }
    let policy = ReusePolicy {
        lambda: [0.0, 0.5, 2.0, 8.0][rng.gen_range(0..4)],
        tau_margin: [0.0, 0.0, 0.05][rng.gen_range(0..3)],
        tau_sim: 0.0,
        max_candidates_per_node: 3,
        candidate_depth: rng.gen_range(1..=3),
        min_node_affinity: 0.5,
        ..ReusePolicy::default()
    };
    let coeffs = CostCoefficients {
        c_retrieve: [0.0, 0.05, 0.5][rng.gen_range(0..3)],
        ..CostCoefficients::default()
    };
    let task = TaskSpec {
        id: "small".into(),
        description: "scan".into(),
        demand,
        family: "small".into(),
        seed: 0,
    };
    SmallInstance {
        store,
        task,
        plan,
        policy,
        coeffs,
    }
}
