mod common;

use common::random_embedding;
use eagle_core::{
    cosine_similarity, Embedding, Exec, FeedbackRecord, FeedbackStore, MatchOutcome, Neighbor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn record(e: Embedding, ts: u64) -> FeedbackRecord {
    FeedbackRecord {
        record_id: 0,
        ts_ms: ts,
        model_a: "a".into(),
        model_b: "b".into(),
        outcome: MatchOutcome::WinA,
        embedding: e,
        query_text: None,
    }
}

fn seeded_store(seed: u64, n: usize, dim: usize, coarse: bool) -> FeedbackStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = FeedbackStore::new(dim).unwrap();
    for i in 0..n {
        s.insert(record(random_embedding(&mut rng, dim, coarse), i as u64))
            .unwrap();
    }
    s
}

/// Exhaustive scan: score everything, full sort, truncate.
fn scan(store: &FeedbackStore, q: &Embedding, n: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = store
        .records()
        .iter()
        .map(|r| Neighbor {
            record_id: r.record_id,
            similarity: cosine_similarity(q, &r.embedding).unwrap(),
        })
        .collect();
    all.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap()
            .then(a.record_id.cmp(&b.record_id))
    });
    all.truncate(n);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_equals_exhaustive_scan(seed in any::<u64>(), n_rec in 0usize..400, dim in 1usize..12, k in 1usize..50, coarse in any::<bool>()) {
        let store = seeded_store(seed, n_rec, dim, coarse);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let q = random_embedding(&mut rng, dim, coarse);
        let got = store.knn(&q, k).unwrap();
        prop_assert_eq!(got.len(), k.min(n_rec));
        prop_assert_eq!(&got, &scan(&store, &q, k));
        prop_assert_eq!(got, store.knn_with(&q, k, Exec::Sequential).unwrap());
    }

    #[test]
    fn cosine_symmetry_and_scale(seed in any::<u64>(), dim in 1usize..32, alpha in 0.001..1000.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_embedding(&mut rng, dim, false);
        let v = random_embedding(&mut rng, dim, false);
        let uv = cosine_similarity(&u, &v).unwrap();
        prop_assert!((uv - cosine_similarity(&v, &u).unwrap()).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&uv));
        let scaled = Embedding::new(u.as_slice().iter().map(|x| x * alpha).collect()).unwrap();
        prop_assert!((cosine_similarity(&scaled, &v).unwrap() - uv).abs() <= 1e-9);
    }

    #[test]
    fn appending_only_displaces_the_tail(seed in any::<u64>(), n_rec in 1usize..200, k in 1usize..30) {
        let dim = 6;
        let mut store = seeded_store(seed, n_rec, dim, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let q = random_embedding(&mut rng, dim, true);
        let before = store.knn(&q, k).unwrap();
        store.insert(record(random_embedding(&mut rng, dim, true), n_rec as u64)).unwrap();
        let after = store.knn(&q, k).unwrap();
        let kept: Vec<u64> = after.iter().map(|n| n.record_id).filter(|id| before.iter().any(|b| b.record_id == *id)).collect();
        let expected: Vec<u64> = before.iter().map(|n| n.record_id).take(kept.len()).collect();
        prop_assert_eq!(kept, expected);
    }
}

#[test]
fn thousand_records_match_scan() {
    let store = seeded_store(1000, 1000, 16, false);
    assert_eq!(store.len(), 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let q = random_embedding(&mut rng, 16, false);
        assert_eq!(store.knn(&q, 20).unwrap(), scan(&store, &q, 20));
    }
}

#[test]
fn hundred_record_snapshot_preserves_knn_answers() {
    let store = seeded_store(100, 100, 8, false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.jsonl");
    store.snapshot(&path).unwrap();
    let loaded = FeedbackStore::load(&path, 8).unwrap();
    assert_eq!(loaded.records(), store.records());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let q = random_embedding(&mut rng, 8, false);
        assert_eq!(loaded.knn(&q, 20).unwrap(), store.knn(&q, 20).unwrap());
    }
}
