mod common;

use std::collections::BTreeMap;

use common::{random_embedding, random_log};
use eagle_core::{
    combined_scores, compute_global, local_scores, route, select, FeedbackStore, ModelId,
    ModelRegistry, RatingTable, RouterConfig, RoutingRequest,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 4;

fn registry(rng: &mut ChaCha8Rng) -> ModelRegistry {
    ModelRegistry::new((0..5).map(|i| {
        (
            format!("m{i}"),
            f64::from(rng.random_range(1..20u32)) / 10.0,
        )
    }))
    .unwrap()
}

fn setup(seed: u64) -> (RatingTable, FeedbackStore, ModelRegistry) {
    let log = random_log(seed, 200, 5, DIM);
    let mut store = FeedbackStore::new(DIM).unwrap();
    for r in &log {
        store.insert(r.clone()).unwrap();
    }
    let global = compute_global(&log, &Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (global, store, registry(&mut rng))
}

fn as_scores(t: &RatingTable) -> BTreeMap<ModelId, f64> {
    t.iter().map(|(m, r)| (m.clone(), r)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fusion_boundaries(seed in any::<u64>(), budget in 0.1..2.0f64) {
        let (global, store, reg) = setup(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let req = RoutingRequest { embedding: random_embedding(&mut rng, DIM, false), budget, request_id: "r".into() };
        for p in [0.0, 1.0] {
            let cfg = RouterConfig { p_global: p, ..RouterConfig::default() };
            match route(&req, &global, &store, &reg, &cfg) {
                Ok(d) => {
                    let side = if p == 1.0 { &d.global_part } else { &d.local_part };
                    prop_assert_eq!(&d.chosen, &select(&as_scores(side), budget, &reg).unwrap());
                    prop_assert!(reg.cost(d.chosen.as_str()).unwrap() <= budget);
                }
                Err(e) => {
                    let exhausted = matches!(e, eagle_core::Error::BudgetExhausted { .. });
                    prop_assert!(exhausted);
                }
            }
        }
    }

    #[test]
    fn translation_invariant_choice(ratings in prop::collection::vec(0i32..3000, 5), local in prop::collection::vec(0i32..3000, 5), shift in -5000i32..5000, p in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(shift.unsigned_abs()));
        let reg = registry(&mut rng);
        let p = p as f64 / 4.0;
        let g = RatingTable::from_ratings(ratings.iter().enumerate().map(|(i, r)| (format!("m{i}"), f64::from(*r)))).unwrap();
        let l = RatingTable::from_ratings(local.iter().enumerate().map(|(i, r)| (format!("m{i}"), f64::from(*r)))).unwrap();
        let c = f64::from(shift);
        let base = select(&combined_scores(&g, &l, p, 1000.0).unwrap(), 5.0, &reg).unwrap();
        let moved = select(&combined_scores(&g.shifted(c), &l.shifted(c), p, 1000.0).unwrap(), 5.0, &reg).unwrap();
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn budget_monotone_and_affordable(seed in any::<u64>()) {
        let (global, store, reg) = setup(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let embedding = random_embedding(&mut rng, DIM, false);
        let cfg = RouterConfig::default();
        let mut last = f64::NEG_INFINITY;
        for b in (0..=25).map(|i| f64::from(i) * 0.1) {
            let req = RoutingRequest { embedding: embedding.clone(), budget: b, request_id: "m".into() };
            if let Ok(d) = route(&req, &global, &store, &reg, &cfg) {
                prop_assert!(reg.cost(d.chosen.as_str()).unwrap() <= b);
                prop_assert!(d.affordable.contains(&d.chosen));
                let s = d.scores[&d.chosen];
                prop_assert!(s >= last);
                last = s;
            }
        }
    }

    #[test]
    fn deterministic_and_pure(seed in any::<u64>()) {
        let (global, store, reg) = setup(seed);
        let before_global = global.clone();
        let before_records = store.records().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
        let req = RoutingRequest { embedding: random_embedding(&mut rng, DIM, false), budget: 3.0, request_id: format!("{seed}") };
        let cfg = RouterConfig { exploration_rate: 0.5, seed, ..RouterConfig::default() };
        let a = route(&req, &global, &store, &reg, &cfg).unwrap();
        let b = route(&req, &global, &store, &reg, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        if let Some(c) = &a.comparison {
            prop_assert!(c != &a.chosen && a.affordable.contains(c));
        }
        prop_assert_eq!(global, before_global);
        prop_assert_eq!(store.records(), &before_records[..]);
    }
}

#[test]
fn local_scores_never_touch_global() {
    let (global, store, _) = setup(1);
    let snapshot = global.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let local = local_scores(
        &random_embedding(&mut rng, DIM, false),
        &global,
        &store,
        &RouterConfig::default(),
    )
    .unwrap();
    assert_eq!(global, snapshot);
    assert_eq!(local.matches_seen(), global.matches_seen() + 20);
}
