mod common;

use common::{random_dag, spec_for};
use memograph::graph::{EdgeKind, NodeKind};
use memograph::repository::{EntryContent, Store};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [NodeKind; 3] = [NodeKind::SqlCte, NodeKind::Aggregate, NodeKind::Generic];
const LABELS: [&str; 4] = ["a", "b", "c", "d"];

fn content(rng: &mut ChaCha8Rng, id: String) -> EntryContent {
    let graph = random_dag(rng, 6, &KINDS, &LABELS, &EdgeKind::ALL);
    EntryContent {
        graph_id: id,
        task_embedding: common::onehot(graph.dim(), 1),
        graph,
        ..EntryContent::default()
    }
}

#[test]
fn truncated_log_keeps_committed_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let store = Store::create(&root, spec_for(4)).unwrap();
    let mut ends = Vec::new();
    let mut hashes = Vec::new();
    for i in 0..12 {
        let c = content(&mut rng, format!("g{}", i % 5));
        hashes.push(c.graph.canonical_hash());
        let (id, v) = store.put(c).unwrap();
        ends.push((id, v, std::fs::metadata(root.join("log.jsonl")).unwrap().len()));
    }
    drop(store);
    let log = std::fs::read(root.join("log.jsonl")).unwrap();
    for trial in 0..20 {
        let cut = rng.gen_range(0..=log.len());
        let copy = dir.path().join(format!("copy{trial}"));
        std::fs::create_dir_all(&copy).unwrap();
        std::fs::copy(root.join("meta.json"), copy.join("meta.json")).unwrap();
        std::fs::write(copy.join("log.jsonl"), &log[..cut]).unwrap();
        let reopened = Store::open(&copy).unwrap();
        let view = reopened.snapshot();
        for (k, (id, v, end)) in ends.iter().enumerate() {
            let got = view.get(id, Some(*v));
            if (*end as usize) <= cut {
                assert_eq!(got.unwrap().graph.canonical_hash(), hashes[k]);
            } else {
                assert!(got.is_err());
            }
        }
        // The store keeps working after recovery.
        reopened.put(content(&mut rng, "after".into())).unwrap();
    }
}

#[test]
fn round_trip_preserves_hashes_on_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path(), spec_for(4)).unwrap();
    let mut expected = Vec::new();
    for i in 0..60 {
        let c = content(&mut rng, format!("g{i}"));
        expected.push((c.graph_id.clone(), c.graph.canonical_hash()));
        store.put(c).unwrap();
    }
    drop(store);
    let view = Store::open(dir.path()).unwrap().snapshot();
    for (id, h) in expected {
        assert_eq!(view.get(&id, None).unwrap().graph.canonical_hash(), h);
    }
}
