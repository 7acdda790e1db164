//! Synthetic task families with controlled overlap between consecutive plans.
//!
//! A family fixes one skeleton DAG over `base_nodes` positions (kinds and
//! edges). Task `i` copies `ceil(overlap * base_nodes)` positions verbatim
//! (kind, label, meters) from task `i - 1` and fills the rest with fresh
//! labels. Every plan also has its own root prompt node, wired to the
//! skeleton's sources, carrying the task description.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, HashingEmbedder};
use crate::graph::{CostAnnotation, EdgeKind, NodeKind, ReasoningEdge, ReasoningGraph, ReasoningNode};
use crate::memo::{Planner, TaskSpec};
use crate::{Error, Result};

/// Fresh labels stay below this cosine to every earlier label of the same kind,
/// so only copied nodes look alike.
const FRESH_LABEL_MAX_COSINE: f64 = 0.85;
const SECOND_PARENT_PROB: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeterRanges {
    pub tokens: [u64; 2],
    pub tool_calls: [u64; 2],
    pub latency_ms: [f64; 2],
}

impl Default for MeterRanges {
    fn default() -> Self {
        MeterRanges {
            tokens: [200, 2000],
            tool_calls: [0, 3],
            latency_ms: [50.0, 1500.0],
        }
    }
}

impl MeterRanges {
    /// Every node gets exactly `m`.
    pub fn uniform(m: &CostAnnotation) -> Self {
        MeterRanges {
            tokens: [m.tokens; 2],
            tool_calls: [m.tool_calls; 2],
            latency_ms: [m.latency_ms; 2],
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> CostAnnotation {
        let latency = if self.latency_ms[0] == self.latency_ms[1] {
            self.latency_ms[0]
        } else {
            rng.gen_range(self.latency_ms[0]..=self.latency_ms[1])
        };
        CostAnnotation::new(
            rng.gen_range(self.tokens[0]..=self.tokens[1]),
            rng.gen_range(self.tool_calls[0]..=self.tool_calls[1]),
            latency,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub name: String,
    pub n_tasks: usize,
    pub base_nodes: usize,
    /// Fraction of positions copied from the previous task.
    pub overlap: f64,
    /// Relative weights of the kinds assigned to skeleton positions.
    pub kinds_mix: BTreeMap<NodeKind, f64>,
    pub meter_ranges: MeterRanges,
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            name: "analytics".into(),
            n_tasks: 8,
            base_nodes: 11,
            overlap: 0.7,
            kinds_mix: [
                (NodeKind::FeatureDef, 0.3),
                (NodeKind::SqlCte, 0.25),
                (NodeKind::ToolCall, 0.15),
                (NodeKind::Aggregate, 0.2),
                (NodeKind::Generic, 0.1),
            ]
            .into(),
            meter_ranges: MeterRanges::default(),
            seed: 0,
        }
    }
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_tasks == 0 {
            return bad("family.n_tasks must be >= 1".into());
        }
        if self.base_nodes == 0 {
            return bad("family.base_nodes must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("family.overlap must lie in [0,1], got {}", self.overlap));
        }
        if self.kinds_mix.values().any(|w| !(w.is_finite() && *w >= 0.0)) || self.kinds_mix.values().sum::<f64>() <= 0.0 {
            return bad("family.kinds_mix needs nonnegative weights with a positive sum".into());
        }
        let r = &self.meter_ranges;
        if r.tokens[0] > r.tokens[1] || r.tool_calls[0] > r.tool_calls[1] {
            return bad("family.meter_ranges must be [low, high] with low <= high".into());
        }
        if !(r.latency_ms[0].is_finite() && r.latency_ms[1].is_finite() && 0.0 <= r.latency_ms[0] && r.latency_ms[0] <= r.latency_ms[1]) {
            return bad("family.meter_ranges.latency_ms must be finite, >= 0 and ordered".into());
        }
        Ok(())
    }

    /// Number of positions task `i > 0` copies from task `i - 1`.
    pub fn shared_count(&self) -> usize {
        // Guard against products like 0.7 * 10 = 7.000000000000001.
        let exact = self.overlap * self.base_nodes as f64;
        ((exact - 1e-9).ceil().max(0.0) as usize).min(self.base_nodes)
    }
}

fn phrases(kind: NodeKind) -> &'static [&'static str] {
    match kind {
        NodeKind::FeatureDef => &[
            "monthly sales feature",
            "customer churn score",
            "rolling revenue average",
            "weekly active users",
            "order value ratio",
            "seasonal demand index",
        ],
        NodeKind::SqlCte => &[
            "q2 segmentation filter",
            "join orders customers",
            "dedupe event rows",
            "region rollup query",
            "latest snapshot cte",
            "cohort window select",
        ],
        NodeKind::ToolCall => &[
            "fetch pricing api",
            "run forecast model",
            "export warehouse table",
            "call geocoder service",
            "refresh dashboard cache",
        ],
        NodeKind::Aggregate => &[
            "sum revenue by region",
            "average basket size",
            "count repeat buyers",
            "median delivery time",
            "total refunds by month",
        ],
        NodeKind::Generic => &[
            "summarize findings",
            "check data quality",
            "draft recommendation",
            "compare against baseline",
        ],
        NodeKind::Prompt => &[
            "quarterly sales analysis request",
            "churn investigation request",
            "pricing review request",
            "demand planning request",
        ],
    }
}

/// A generated family: its tasks and their cold plans.
#[derive(Clone, Debug)]
pub struct Family {
    pub config: FamilyConfig,
    pub tasks: Vec<TaskSpec>,
    pub plans: Vec<ReasoningGraph>,
    /// Positions task `i` copied from task `i - 1` (empty for task 0).
    pub shared: Vec<Vec<usize>>,
}

impl Planner for Family {
    fn plan(&self, task: &TaskSpec) -> Result<ReasoningGraph> {
        self.tasks
            .iter()
            .position(|t| t.id == task.id)
            .map(|i| self.plans[i].clone())
            .ok_or_else(|| Error::InvalidConfig(format!("task {} is not part of family {}", task.id, self.config.name)))
    }
}

pub fn position_id(p: usize) -> String {
    format!("p{p:02}")
}

pub const ROOT_ID: &str = "root";

struct LabelSource<'a> {
    rng: ChaCha8Rng,
    embedder: &'a HashingEmbedder,
    seen: BTreeMap<NodeKind, Vec<Vec<f64>>>,
}

impl LabelSource<'_> {
    fn tag(&mut self) -> String {
        const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
        let mut t: String = (0..6).map(|_| ALPHABET[self.rng.gen_range(0..ALPHABET.len())] as char).collect();
        t.replace_range(0..1, &((b'a' + self.rng.gen_range(0..26)) as char).to_string());
        t
    }

    /// A label for `kind` no closer than [`FRESH_LABEL_MAX_COSINE`] to any earlier one.
    fn fresh(&mut self, kind: NodeKind) -> Result<(String, Vec<f64>)> {
        let bank = phrases(kind);
        for _ in 0..1000 {
            let label = format!("{} {}", bank[self.rng.gen_range(0..bank.len())], self.tag());
            let feature = self.embedder.node_feature(kind, &label);
            let seen = self.seen.entry(kind).or_default();
            if seen.iter().all(|f| cosine(f, &feature) < FRESH_LABEL_MAX_COSINE) {
                seen.push(feature.clone());
                return Ok((label, feature));
            }
        }
        Err(Error::InvalidConfig(format!("could not draw a distinct {kind} label")))
    }
}

struct Slot {
    label: String,
    feature: Vec<f64>,
    meters: CostAnnotation,
}

pub fn generate_family(cfg: &FamilyConfig, embedder: &HashingEmbedder) -> Result<Family> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.base_nodes;

    let kinds_mix: Vec<(NodeKind, f64)> = cfg.kinds_mix.iter().map(|(k, w)| (*k, *w)).collect();
    let total: f64 = kinds_mix.iter().map(|(_, w)| w).sum();
    let mut kinds = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = rng.gen_range(0.0..total);
        let mut kind = kinds_mix.last().expect("validated nonempty").0;
        for &(k, w) in &kinds_mix {
            if x < w {
                kind = k;
                break;
            }
            x -= w;
        }
        kinds.push(kind);
    }
    let mut skeleton: Vec<(usize, usize, EdgeKind)> = Vec::new();
    for p in 1..n {
        let first = rng.gen_range(0..p);
        skeleton.push((first, p, EdgeKind::ALL[rng.gen_range(0..EdgeKind::ALL.len())]));
        if p >= 2 && rng.gen_bool(SECOND_PARENT_PROB) {
            let mut second = rng.gen_range(0..p - 1);
            if second >= first {
                second += 1;
            }
            skeleton.push((second, p, EdgeKind::ALL[rng.gen_range(0..EdgeKind::ALL.len())]));
        }
    }
    let sources: Vec<usize> = (0..n).filter(|p| !skeleton.iter().any(|e| e.1 == *p)).collect();

    let mut labels = LabelSource {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c61_6265_6c73),
        embedder,
        seen: BTreeMap::new(),
    };
    let mut family = Family {
        config: cfg.clone(),
        tasks: Vec::with_capacity(cfg.n_tasks),
        plans: Vec::with_capacity(cfg.n_tasks),
        shared: Vec::with_capacity(cfg.n_tasks),
    };
    let mut prev: Vec<Slot> = Vec::new();
    for i in 0..cfg.n_tasks {
        let shared: Vec<usize> = if i == 0 {
            Vec::new()
        } else {
            let mut s = sample(&mut rng, n, cfg.shared_count()).into_vec();
            s.sort_unstable();
            s
        };
        let mut slots = Vec::with_capacity(n);
        for p in 0..n {
            if shared.binary_search(&p).is_ok() {
                let old = &prev[p];
                slots.push(Slot {
                    label: old.label.clone(),
                    feature: old.feature.clone(),
                    meters: old.meters.clone(),
                });
            } else {
                let (label, feature) = labels.fresh(kinds[p])?;
                slots.push(Slot {
                    label,
                    feature,
                    meters: cfg.meter_ranges.sample(&mut rng),
                });
            }
        }

        let (description, root_feature) = labels.fresh(NodeKind::Prompt)?;
        let mut plan = ReasoningGraph::new(embedder.spec().dim);
        plan.add_node(
            ReasoningNode::new(ROOT_ID, NodeKind::Prompt, &description, root_feature).with_meters(cfg.meter_ranges.sample(&mut rng)),
        )?;
        for (p, slot) in slots.iter().enumerate() {
            plan.add_node(ReasoningNode::new(position_id(p), kinds[p], &slot.label, slot.feature.clone()).with_meters(slot.meters.clone()))?;
        }
        for &s in &sources {
            plan.add_edge(ReasoningEdge::new(ROOT_ID, position_id(s), EdgeKind::Causal))?;
        }
        for &(a, b, kind) in &skeleton {
            plan.add_edge(ReasoningEdge::new(position_id(a), position_id(b), kind))?;
        }

        family.tasks.push(TaskSpec {
            id: format!("{}-{:03}", cfg.name, i),
            demand: embedder.embed_text(&description),
            description,
            family: cfg.name.clone(),
            seed: cfg.seed,
        });
        family.plans.push(plan);
        family.shared.push(shared);
        prev = slots;
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingSpec;
    use std::collections::BTreeSet;

    fn embedder() -> HashingEmbedder {
        EmbeddingSpec::default().embedder().unwrap()
    }

    fn labels(g: &ReasoningGraph) -> BTreeSet<String> {
        g.nodes().iter().filter(|n| n.id != ROOT_ID).map(|n| n.label.clone()).collect()
    }

    #[test]
    fn shared_count_rounds_up_exactly() {
        let c = |overlap, base_nodes| FamilyConfig {
            overlap,
            base_nodes,
            ..FamilyConfig::default()
        };
        assert_eq!(c(0.7, 10).shared_count(), 7);
        assert_eq!(c(0.7, 11).shared_count(), 8);
        assert_eq!(c(0.0, 11).shared_count(), 0);
        assert_eq!(c(1.0, 11).shared_count(), 11);
        assert_eq!(c(0.05, 11).shared_count(), 1);
    }

    #[test]
    fn overlap_controls_label_intersection() {
        for (overlap, expect) in [(0.0, 0), (0.7, 7), (1.0, 10)] {
            let cfg = FamilyConfig {
                overlap,
                base_nodes: 10,
                n_tasks: 4,
                seed: 11,
                ..FamilyConfig::default()
            };
            let f = generate_family(&cfg, &embedder()).unwrap();
            for i in 1..4 {
                let common = labels(&f.plans[i]).intersection(&labels(&f.plans[i - 1])).count();
                assert_eq!(common, expect, "overlap {overlap} task {i}");
            }
        }
    }

    #[test]
    fn full_overlap_plans_match_but_roots() {
        let cfg = FamilyConfig {
            overlap: 1.0,
            n_tasks: 3,
            ..FamilyConfig::default()
        };
        let f = generate_family(&cfg, &embedder()).unwrap();
        let strip = |g: &ReasoningGraph| {
            let keep: Vec<&str> = g.nodes().iter().filter(|n| n.id != ROOT_ID).map(|n| n.id.as_str()).collect();
            g.induced_subgraph(keep).unwrap()
        };
        assert_eq!(strip(&f.plans[0]), strip(&f.plans[2]));
        assert_ne!(f.plans[0].node(ROOT_ID).unwrap().label, f.plans[1].node(ROOT_ID).unwrap().label);
    }

    #[test]
    fn deterministic_and_valid() {
        let cfg = FamilyConfig {
            seed: 99,
            ..FamilyConfig::default()
        };
        let a = generate_family(&cfg, &embedder()).unwrap();
        let b = generate_family(&cfg, &embedder()).unwrap();
        assert_eq!(a.plans, b.plans);
        assert_eq!(a.tasks, b.tasks);
        for (t, g) in a.tasks.iter().zip(&a.plans) {
            assert!(g.validate().is_empty());
            assert_eq!(g.len(), cfg.base_nodes + 1);
            assert_eq!(t.demand, embedder().embed_text(&t.description));
            assert_eq!(&a.plan(t).unwrap(), g);
        }
        let other = generate_family(&FamilyConfig { seed: 100, ..cfg }, &embedder()).unwrap();
        assert_ne!(other.plans, a.plans);
    }

    #[test]
    fn fresh_labels_are_distinct_in_feature_space() {
        let f = generate_family(&FamilyConfig { overlap: 0.0, n_tasks: 6, ..FamilyConfig::default() }, &embedder()).unwrap();
        let nodes: Vec<&ReasoningNode> = f.plans.iter().flat_map(|g| g.nodes()).collect();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if a.kind == b.kind {
                    assert!(cosine(&a.feature, &b.feature) < FRESH_LABEL_MAX_COSINE);
                }
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let e = embedder();
        for cfg in [
            FamilyConfig { n_tasks: 0, ..FamilyConfig::default() },
            FamilyConfig { overlap: 1.5, ..FamilyConfig::default() },
            FamilyConfig { kinds_mix: BTreeMap::new(), ..FamilyConfig::default() },
            FamilyConfig {
                meter_ranges: MeterRanges { tokens: [5, 1], ..MeterRanges::default() },
                ..FamilyConfig::default()
            },
        ] {
            assert!(matches!(generate_family(&cfg, &e), Err(Error::InvalidConfig(_))));
        }
    }
}
