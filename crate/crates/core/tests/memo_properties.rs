mod common;

use common::{brute_force_loss, small_instance};
use memograph::cost::CostCoefficients;
use memograph::embedding::EmbeddingSpec;
use memograph::harness::{generate_family, FamilyConfig};
use memograph::memo::{gate_respected, verify_monotone, MemoEngine, ReusePolicy};
use memograph::repository::{EntryContent, Store};
use memograph::similarity::SimilarityConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn full_width_beam_is_optimal_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = SimilarityConfig::default();
    for _ in 0..25 {
        let inst = small_instance(&mut rng);
        let view = inst.store.snapshot();
        let engine = MemoEngine::new(&view, &inst.policy, &inst.coeffs, &cfg).unwrap();
        let pool = engine.prepare(&inst.task, &inst.plan).unwrap();
        let beam = engine.beam(&pool, 4096).unwrap();
        let best = brute_force_loss(&pool, &view, &inst.policy, &inst.coeffs, &cfg);
        assert!((beam.loss.total - best).abs() < 1e-9, "beam {} vs brute force {}", beam.loss.total, best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stitching_contract_holds_on_families(seed in 0u64..10_000, lambda in 0.0f64..6.0, overlap in 0.3f64..1.0) {
        let spec = EmbeddingSpec::default();
        let fam = generate_family(
            &FamilyConfig { n_tasks: 4, overlap, seed, ..FamilyConfig::default() },
            &spec.embedder().unwrap(),
        ).unwrap();
        let store = Store::in_memory(spec);
        let policy = ReusePolicy { lambda, ..ReusePolicy::default() };
        let coeffs = CostCoefficients::default();
        let cfg = SimilarityConfig::default();
        for (task, plan) in fam.tasks.iter().zip(&fam.plans) {
            let view = store.snapshot();
            let engine = MemoEngine::new(&view, &policy, &coeffs, &cfg).unwrap();
            let pool = engine.prepare(task, plan).unwrap();
            let greedy = engine.greedy(&pool).unwrap();
            prop_assert!(verify_monotone(&greedy));
            prop_assert!(greedy.events.iter().all(|e| gate_respected(e, policy.tau_margin)));
            prop_assert_eq!(pool.is_pi_stable(&greedy.regions, lambda, policy.tau_margin), Some(true));
            prop_assert!(greedy.loss.total <= greedy.cold_loss.total + 1e-12);
            prop_assert!((pool.fast_loss(&greedy.regions, lambda).unwrap() - greedy.loss.total).abs() < 1e-9);
            prop_assert!(greedy.final_graph.validate().is_empty());
            for k in [2, 4] {
                let beam = engine.beam(&pool, k).unwrap();
                prop_assert!(verify_monotone(&beam));
                prop_assert!(beam.loss.total <= greedy.loss.total + 1e-12);
            }
            store.put(EntryContent {
                graph_id: task.id.clone(),
                graph: greedy.final_graph.clone(),
                task_embedding: task.demand.clone(),
                ..EntryContent::default()
            }).unwrap();
        }
    }
}
