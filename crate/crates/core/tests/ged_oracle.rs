mod common;

use common::{exhaustive_ged, random_dag};
use memograph::graph::{EdgeKind, NodeKind};
use memograph::similarity::{ged, EditCosts, SimilarityConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KINDS: [NodeKind; 2] = [NodeKind::SqlCte, NodeKind::Prompt];
const LABELS: [&str; 2] = ["x", "y"];
const EDGE_KINDS: [EdgeKind; 2] = [EdgeKind::Dataflow, EdgeKind::Causal];

#[test]
fn branch_and_bound_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let corpus: Vec<_> = (0..40).map(|_| random_dag(&mut rng, 4, &KINDS, &LABELS, &EDGE_KINDS)).collect();
    let cfg = SimilarityConfig::default();
    for a in &corpus {
        for b in &corpus {
            let got = ged(a, b, &cfg);
            assert!(!got.approximate);
            assert_eq!(got.cost, exhaustive_ged(a, b, &cfg.edit_costs));
        }
    }
}

#[test]
fn greedy_fallback_is_an_upper_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = SimilarityConfig {
        exact_ged_max_nodes: 1,
        ..SimilarityConfig::default()
    };
    for _ in 0..200 {
        let a = random_dag(&mut rng, 4, &KINDS, &LABELS, &EDGE_KINDS);
        let b = random_dag(&mut rng, 4, &KINDS, &LABELS, &EDGE_KINDS);
        let got = ged(&a, &b, &cfg);
        assert!(got.cost >= exhaustive_ged(&a, &b, &cfg.edit_costs));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_enumeration_under_random_costs(
        seed in any::<u64>(),
        ins in 0.1f64..3.0, del in 0.1f64..3.0, rel_frac in 0.0f64..1.0, eins in 0.0f64..2.0, edel in 0.0f64..2.0,
    ) {
        let costs = EditCosts {
            node_insert: ins,
            node_delete: del,
            node_relabel: rel_frac * (ins + del),
            edge_insert: eins,
            edge_delete: edel,
        };
        let cfg = SimilarityConfig { edit_costs: costs, ..SimilarityConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_dag(&mut rng, 4, &KINDS, &LABELS, &EDGE_KINDS);
        let b = random_dag(&mut rng, 4, &KINDS, &LABELS, &EDGE_KINDS);
        let got = ged(&a, &b, &cfg).cost;
        let want = exhaustive_ged(&a, &b, &costs);
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
        prop_assert!((ged(&b, &a, &cfg).cost - exhaustive_ged(&b, &a, &costs)).abs() < 1e-9);
    }
}
