mod common;

use common::random_dag;
use memograph::graph::{EdgeKind, NodeKind};
use memograph::similarity::{similarity, similarity_detail, SimilarityConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KINDS: [NodeKind; 3] = [NodeKind::SqlCte, NodeKind::Prompt, NodeKind::ToolCall];
const LABELS: [&str; 4] = ["load", "filter", "join", "score"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn identity_symmetry_range(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_dag(&mut rng, 6, &KINDS, &LABELS, &EdgeKind::ALL);
        let b = random_dag(&mut rng, 6, &KINDS, &LABELS, &EdgeKind::ALL);
        let cfg = SimilarityConfig { alpha, ..SimilarityConfig::default() };
        prop_assert!((similarity(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
        let ab = similarity_detail(&a, &b, &cfg).unwrap();
        let ba = similarity_detail(&b, &a, &cfg).unwrap();
        prop_assert!((ab.score - ba.score).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.score));
        prop_assert!((0.0..=1.0).contains(&ab.s_struct) && (0.0..=1.0).contains(&ab.s_sem));
    }
}
