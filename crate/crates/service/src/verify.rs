use std::fs;
use std::path::Path;

use eagle_core::{for_each_record, Error, ModelId, RatingTable, Result};
use serde::Serialize;

use crate::state::{RatingsFile, FEEDBACK_FILE, RATINGS_FILE};

/// First model whose stored rating differs from the replayed one. `None`
/// on either side means the model is absent there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub model: ModelId,
    pub stored: Option<f64>,
    pub replayed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub records: u64,
    pub stored_matches: u64,
    pub divergence: Option<Divergence>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.divergence.is_none() && self.records == self.stored_matches
    }
}

/// Replays `feedback.jsonl` one line at a time and compares the result with
/// `ratings.json`, bit for bit. A missing log counts as empty; a missing
/// ratings file counts as the empty table.
pub fn verify_data_dir(data_dir: impl AsRef<Path>) -> Result<VerifyReport> {
    let dir = data_dir.as_ref();
    let ratings_path = dir.join(RATINGS_FILE);
    let stored: Option<RatingsFile> = if ratings_path.exists() {
        let text = fs::read_to_string(&ratings_path).map_err(|source| Error::Io {
            path: ratings_path.clone(),
            source,
        })?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: ratings_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?)
    } else {
        None
    };
    let elo = stored.as_ref().map(|s| s.elo).unwrap_or_default();

    let mut replayed = RatingTable::new();
    let log = dir.join(FEEDBACK_FILE);
    if log.exists() {
        for_each_record(&log, |_, record| replayed.apply_record(&record, &elo))?;
    }

    let stored = stored.map(|s| s.table).unwrap_or_default();
    let divergence = first_divergence(&stored, &replayed);
    Ok(VerifyReport {
        records: replayed.matches_seen(),
        stored_matches: stored.matches_seen(),
        divergence,
    })
}

fn first_divergence(stored: &RatingTable, replayed: &RatingTable) -> Option<Divergence> {
    let mut models: Vec<&ModelId> = stored
        .ratings()
        .keys()
        .chain(replayed.ratings().keys())
        .collect();
    models.sort();
    models.dedup();
    models.into_iter().find_map(|m| {
        let s = stored.get(m.as_str());
        let r = replayed.get(m.as_str());
        let same = match (s, r) {
            (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        };
        (!same).then(|| Divergence {
            model: m.clone(),
            stored: s,
            replayed: r,
        })
    })
}
