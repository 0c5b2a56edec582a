#![allow(dead_code)]

use eagle_core::{Embedding, FeedbackRecord, MatchOutcome, ModelId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn emb(v: &[f64]) -> Embedding {
    Embedding::new(v.to_vec()).unwrap()
}

/// Random non-zero embedding; components are small integers when `coarse`
/// so that exact similarity ties occur.
pub fn random_embedding(rng: &mut ChaCha8Rng, dim: usize, coarse: bool) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(-2i32..=2))
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        if let Ok(e) = Embedding::new(v) {
            return e;
        }
    }
}

/// Seeded log with non-decreasing timestamps (with repeats) over
/// `models` models.
pub fn random_log(seed: u64, len: usize, models: usize, dim: usize) -> Vec<FeedbackRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts = 0u64;
    (0..len)
        .map(|i| {
            ts += rng.random_range(0..3);
            let a = rng.random_range(0..models);
            let mut b = rng.random_range(0..models - 1);
            if b >= a {
                b += 1;
            }
            let outcome = match rng.random_range(0..3) {
                0 => MatchOutcome::WinA,
                1 => MatchOutcome::WinB,
                _ => MatchOutcome::Draw,
            };
            FeedbackRecord {
                record_id: i as u64 + 1,
                ts_ms: ts,
                model_a: ModelId::new(format!("m{a}")),
                model_b: ModelId::new(format!("m{b}")),
                outcome,
                embedding: random_embedding(&mut rng, dim, false),
                query_text: None,
            }
        })
        .collect()
}
