//! ELO arithmetic: expected scores, single updates, pairwise matches, and
//! replaying a feedback log into a rating table.
//!
//! A [`RatingTable`] is a plain value. Replaying a log chronologically and
//! then extending the result with newer records yields bit-identical ratings
//! to replaying the concatenated log, which is what lets the global table be
//! maintained online in O(new records).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelId;
use crate::store::FeedbackRecord;

pub const DEFAULT_K_FACTOR: f64 = 32.0;
pub const DEFAULT_INITIAL_RATING: f64 = 1000.0;

/// Result of one pairwise comparison, from the perspective of model A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOutcome {
    WinA,
    WinB,
    Draw,
}

impl MatchOutcome {
    /// Actual score S for model A.
    pub fn score_a(self) -> f64 {
        match self {
            MatchOutcome::WinA => 1.0,
            MatchOutcome::WinB => 0.0,
            MatchOutcome::Draw => 0.5,
        }
    }

    pub fn score_b(self) -> f64 {
        1.0 - self.score_a()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloConfig {
    pub k_factor: f64,
    pub initial_rating: f64,
    /// 0 replays the log once in timestamp order; m > 0 averages m seeded
    /// shuffles of the log.
    pub permutations: u32,
    pub seed: u64,
}

impl Default for EloConfig {
    fn default() -> Self {
        EloConfig {
            k_factor: DEFAULT_K_FACTOR,
            initial_rating: DEFAULT_INITIAL_RATING,
            permutations: 0,
            seed: 0,
        }
    }
}

impl EloConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_factor.is_finite() && self.k_factor > 0.0) {
            return Err(Error::config(format!(
                "k_factor must be positive and finite, got {}",
                self.k_factor
            )));
        }
        if !self.initial_rating.is_finite() {
            return Err(Error::config("initial_rating must be finite"));
        }
        Ok(())
    }
}

/// Probability that a player rated `rating` beats one rated `opponent`.
pub fn expected_score(rating: f64, opponent: f64) -> Result<f64> {
    if !rating.is_finite() || !opponent.is_finite() {
        return Err(Error::invalid(format!(
            "ratings must be finite, got {rating} and {opponent}"
        )));
    }
    Ok(1.0 / (1.0 + 10f64.powf((opponent - rating) / 400.0)))
}

/// `rating + k * (actual - expected)`.
pub fn update_rating(rating: f64, k: f64, actual: f64, expected: f64) -> Result<f64> {
    if actual != 0.0 && actual != 0.5 && actual != 1.0 {
        return Err(Error::invalid(format!(
            "actual score must be 0, 0.5 or 1, got {actual}"
        )));
    }
    if !(0.0..=1.0).contains(&expected) {
        return Err(Error::invalid(format!(
            "expected score must lie in [0, 1], got {expected}"
        )));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid(format!("k must be positive, got {k}")));
    }
    if !rating.is_finite() {
        return Err(Error::invalid("rating must be finite"));
    }
    Ok(rating + k * (actual - expected))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    ratings: BTreeMap<ModelId, f64>,
    matches_seen: u64,
    /// Timestamp of the newest record applied through the chronological
    /// path; `None` until one is applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    last_ts_ms: Option<u64>,
}

impl RatingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from explicit ratings, e.g. for tests or restored state.
    pub fn from_ratings<I, M>(ratings: I) -> Result<Self>
    where
        I: IntoIterator<Item = (M, f64)>,
        M: Into<ModelId>,
    {
        let mut table = RatingTable::new();
        for (model, r) in ratings {
            if !r.is_finite() {
                return Err(Error::invalid("ratings must be finite"));
            }
            table.ratings.insert(model.into(), r);
        }
        Ok(table)
    }

    pub fn get(&self, model: &str) -> Option<f64> {
        self.ratings.get(model).copied()
    }

    /// Rating of `model`, or `default` when the model has never played.
    pub fn get_or(&self, model: &str, default: f64) -> f64 {
        self.get(model).unwrap_or(default)
    }

    pub fn ratings(&self) -> &BTreeMap<ModelId, f64> {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn matches_seen(&self) -> u64 {
        self.matches_seen
    }

    pub fn last_ts_ms(&self) -> Option<u64> {
        self.last_ts_ms
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModelId, f64)> {
        self.ratings.iter().map(|(m, r)| (m, *r))
    }

    /// Inserts `model` at `rating` unless it already has one.
    pub fn ensure_model(&mut self, model: &ModelId, rating: f64) {
        if !self.ratings.contains_key(model) {
            self.ratings.insert(model.clone(), rating);
        }
    }

    /// Adds `delta` to every rating.
    pub fn shifted(&self, delta: f64) -> RatingTable {
        let mut out = self.clone();
        for r in out.ratings.values_mut() {
            *r += delta;
        }
        out
    }

    /// Applies one match in place. Unseen models enter at
    /// `cfg.initial_rating`.
    pub fn apply_match(
        &mut self,
        a: &ModelId,
        b: &ModelId,
        outcome: MatchOutcome,
        cfg: &EloConfig,
    ) -> Result<()> {
        if a == b {
            return Err(Error::invalid(format!("model {a} cannot play itself")));
        }
        let ra = self.get_or(a.as_str(), cfg.initial_rating);
        let rb = self.get_or(b.as_str(), cfg.initial_rating);
        let ea = expected_score(ra, rb)?;
        let eb = expected_score(rb, ra)?;
        let ra_new = update_rating(ra, cfg.k_factor, outcome.score_a(), ea)?;
        let rb_new = update_rating(rb, cfg.k_factor, outcome.score_b(), eb)?;
        self.set(a, ra_new);
        self.set(b, rb_new);
        self.matches_seen += 1;
        Ok(())
    }

    /// Non-mutating form of [`RatingTable::apply_match`].
    pub fn with_match(
        &self,
        a: &ModelId,
        b: &ModelId,
        outcome: MatchOutcome,
        cfg: &EloConfig,
    ) -> Result<RatingTable> {
        let mut next = self.clone();
        next.apply_match(a, b, outcome, cfg)?;
        Ok(next)
    }

    /// Applies a feedback record through the chronological path, rejecting
    /// records older than the newest one already applied.
    pub fn apply_record(&mut self, record: &FeedbackRecord, cfg: &EloConfig) -> Result<()> {
        self.check_fresh(record)?;
        self.apply_match(&record.model_a, &record.model_b, record.outcome, cfg)?;
        self.last_ts_ms = Some(record.ts_ms);
        Ok(())
    }

    fn check_fresh(&self, record: &FeedbackRecord) -> Result<()> {
        match self.last_ts_ms {
            Some(last) if record.ts_ms < last => Err(Error::StaleFeedback {
                record_id: record.record_id,
                ts_ms: record.ts_ms,
                last_ts_ms: last,
            }),
            _ => Ok(()),
        }
    }

    fn set(&mut self, model: &ModelId, rating: f64) {
        match self.ratings.get_mut(model.as_str()) {
            Some(r) => *r = rating,
            None => {
                self.ratings.insert(model.clone(), rating);
            }
        }
    }
}

/// Replays `log` into a fresh table.
///
/// The log is stably sorted by timestamp first, so ties keep insertion
/// order. With `cfg.permutations == m > 0` the log is instead replayed under
/// `m` seeded shuffles and the per-model ratings averaged; the resulting
/// table then carries no `last_ts_ms` and cannot be extended incrementally.
pub fn compute_global(log: &[FeedbackRecord], cfg: &EloConfig) -> Result<RatingTable> {
    cfg.validate()?;
    let mut ordered: Vec<&FeedbackRecord> = log.iter().collect();
    ordered.sort_by_key(|r| r.ts_ms);

    if cfg.permutations == 0 {
        let mut table = RatingTable::new();
        for record in ordered {
            table.apply_record(record, cfg)?;
        }
        return Ok(table);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sums: BTreeMap<ModelId, f64> = BTreeMap::new();
    for _ in 0..cfg.permutations {
        let mut shuffled = ordered.clone();
        shuffled.shuffle(&mut rng);
        let table = replay_unordered(&shuffled, cfg)?;
        for (model, r) in table.ratings {
            *sums.entry(model).or_insert(0.0) += r;
        }
    }
    let m = f64::from(cfg.permutations);
    Ok(RatingTable {
        ratings: sums.into_iter().map(|(k, v)| (k, v / m)).collect(),
        matches_seen: log.len() as u64,
        last_ts_ms: None,
    })
}

/// Applies records in the given order without timestamp checks.
pub(crate) fn replay_unordered(
    records: &[&FeedbackRecord],
    cfg: &EloConfig,
) -> Result<RatingTable> {
    let mut table = RatingTable::new();
    for r in records {
        table.apply_match(&r.model_a, &r.model_b, r.outcome, cfg)?;
    }
    Ok(table)
}

/// Extends `table` with `new_records`, touching only the new data.
///
/// Fails without modifying anything if any record is older than its
/// predecessor or than the newest record already in `table`.
pub fn incremental_update(
    table: &RatingTable,
    new_records: &[FeedbackRecord],
    cfg: &EloConfig,
) -> Result<RatingTable> {
    let mut next = table.clone();
    extend_in_place(&mut next, new_records, cfg)?;
    Ok(next)
}

/// In-place form of [`incremental_update`]; on error `table` is unchanged.
pub fn extend_in_place(
    table: &mut RatingTable,
    new_records: &[FeedbackRecord],
    cfg: &EloConfig,
) -> Result<()> {
    cfg.validate()?;
    if cfg.permutations != 0 {
        return Err(Error::config(
            "incremental updates require permutations = 0",
        ));
    }
    let mut last = table.last_ts_ms;
    for r in new_records {
        if let Some(l) = last {
            if r.ts_ms < l {
                return Err(Error::StaleFeedback {
                    record_id: r.record_id,
                    ts_ms: r.ts_ms,
                    last_ts_ms: l,
                });
            }
        }
        if r.model_a == r.model_b {
            return Err(Error::invalid(format!(
                "record {} compares {} with itself",
                r.record_id, r.model_a
            )));
        }
        last = Some(r.ts_ms);
    }
    for r in new_records {
        table.apply_record(r, cfg)?;
    }
    Ok(())
}
