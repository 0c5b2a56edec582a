//! The routing decision: local ratings from retrieved feedback, fusion with
//! the global table, budget-constrained selection, and the optional second
//! model offered for comparison.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelId;
use crate::rating::{EloConfig, RatingTable};
use crate::store::{Embedding, FeedbackRecord, FeedbackStore};

pub const DEFAULT_P_GLOBAL: f64 = 0.5;
pub const DEFAULT_N_NEIGHBORS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub cost_per_query: f64,
    #[serde(default = "default_available")]
    pub available: bool,
}

fn default_available() -> bool {
    true
}

/// Registered models with their fixed per-query cost.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelRegistry {
    entries: BTreeMap<ModelId, ModelEntry>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    models: Vec<RegistryFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFileEntry {
    id: ModelId,
    cost_per_query: f64,
    #[serde(default = "default_available")]
    available: bool,
}

impl Serialize for ModelRegistry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RegistryFile {
            models: self
                .entries
                .iter()
                .map(|(id, e)| RegistryFileEntry {
                    id: id.clone(),
                    cost_per_query: e.cost_per_query,
                    available: e.available,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelRegistry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = RegistryFile::deserialize(d)?;
        let mut reg = ModelRegistry::default();
        for m in file.models {
            if reg.entries.contains_key(&m.id) {
                return Err(serde::de::Error::custom(format!(
                    "duplicate model id {}",
                    m.id
                )));
            }
            reg.upsert(m.id, m.cost_per_query, m.available)
                .map_err(serde::de::Error::custom)?;
        }
        Ok(reg)
    }
}

impl ModelRegistry {
    /// Registry of available models; errors if empty or any cost is invalid.
    pub fn new<I, M>(models: I) -> Result<Self>
    where
        I: IntoIterator<Item = (M, f64)>,
        M: Into<ModelId>,
    {
        let mut reg = ModelRegistry::default();
        for (id, cost) in models {
            reg.upsert(id.into(), cost, true)?;
        }
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.available().next().is_none() {
            return Err(Error::NoAvailableModels);
        }
        Ok(())
    }

    pub fn upsert(&mut self, id: ModelId, cost_per_query: f64, available: bool) -> Result<()> {
        if !(cost_per_query.is_finite() && cost_per_query >= 0.0) {
            return Err(Error::invalid(format!(
                "cost_per_query for {id} must be finite and non-negative, got {cost_per_query}"
            )));
        }
        self.entries.insert(
            id,
            ModelEntry {
                cost_per_query,
                available,
            },
        );
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<ModelEntry> {
        self.entries.remove(id)
    }

    pub fn get(&self, id: &str) -> Option<&ModelEntry> {
        self.entries.get(id)
    }

    pub fn cost(&self, id: &str) -> Option<f64> {
        self.get(id).map(|e| e.cost_per_query)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModelId, &ModelEntry)> {
        self.entries.iter()
    }

    pub fn available(&self) -> impl Iterator<Item = (&ModelId, &ModelEntry)> {
        self.entries.iter().filter(|(_, e)| e.available)
    }

    /// Available models whose cost fits `budget`, in id order.
    pub fn affordable(&self, budget: f64) -> BTreeSet<ModelId> {
        self.available()
            .filter(|(_, e)| e.cost_per_query <= budget)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn min_cost(&self) -> Option<f64> {
        self.available()
            .map(|(_, e)| e.cost_per_query)
            .reduce(f64::min)
    }

    pub fn max_cost(&self) -> Option<f64> {
        self.available()
            .map(|(_, e)| e.cost_per_query)
            .reduce(f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    /// Weight P of the global table in the fused score.
    pub p_global: f64,
    /// Number N of neighbours replayed into the local table.
    pub n_neighbors: usize,
    pub elo: EloConfig,
    /// Probability of proposing a second model for comparison.
    pub exploration_rate: f64,
    pub seed: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            p_global: DEFAULT_P_GLOBAL,
            n_neighbors: DEFAULT_N_NEIGHBORS,
            elo: EloConfig::default(),
            exploration_rate: 0.0,
            seed: 0,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_global) {
            return Err(Error::config(format!(
                "p_global must lie in [0, 1], got {}",
                self.p_global
            )));
        }
        if self.n_neighbors == 0 {
            return Err(Error::config("n_neighbors must be positive"));
        }
        if !(0.0..=1.0).contains(&self.exploration_rate) {
            return Err(Error::config(format!(
                "exploration_rate must lie in [0, 1], got {}",
                self.exploration_rate
            )));
        }
        self.elo.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingRequest {
    pub embedding: Embedding,
    pub budget: f64,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub request_id: String,
    pub chosen: ModelId,
    pub scores: BTreeMap<ModelId, f64>,
    pub global_part: RatingTable,
    pub local_part: RatingTable,
    pub comparison: Option<ModelId>,
    pub affordable: BTreeSet<ModelId>,
}

/// Local table for `query`: a copy of `global` refined by the N most similar
/// stored records, replayed in timestamp order.
pub fn local_scores(
    query: &Embedding,
    global: &RatingTable,
    store: &FeedbackStore,
    cfg: &RouterConfig,
) -> Result<RatingTable> {
    let neighbors = store.knn_records(query, cfg.n_neighbors)?;
    let mut records: Vec<&FeedbackRecord> = neighbors.into_iter().map(|(_, r)| r).collect();
    records.sort_by_key(|r| (r.ts_ms, r.record_id));
    let mut local = global.clone();
    for r in records {
        local.apply_match(&r.model_a, &r.model_b, r.outcome, &cfg.elo)?;
    }
    Ok(local)
}

/// `p * global + (1 - p) * local` over the union of both tables' models;
/// a model missing from one side contributes `initial_rating` there.
pub fn combined_scores(
    global: &RatingTable,
    local: &RatingTable,
    p: f64,
    initial_rating: f64,
) -> Result<BTreeMap<ModelId, f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
    }
    let models: BTreeSet<&ModelId> = global
        .ratings()
        .keys()
        .chain(local.ratings().keys())
        .collect();
    Ok(models
        .into_iter()
        .map(|m| {
            let g = global.get_or(m.as_str(), initial_rating);
            let l = local.get_or(m.as_str(), initial_rating);
            (m.clone(), p * g + (1.0 - p) * l)
        })
        .collect())
}

/// Highest-scoring available model within `budget`. Ties go to the cheaper
/// model, then to the smaller id. Models without a score are not eligible.
pub fn select(
    scores: &BTreeMap<ModelId, f64>,
    budget: f64,
    registry: &ModelRegistry,
) -> Result<ModelId> {
    let mut best: Option<(&ModelId, f64, f64)> = None;
    for (id, entry) in registry.available() {
        if entry.cost_per_query > budget {
            continue;
        }
        let Some(&score) = scores.get(id) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((best_id, best_score, best_cost)) => score
                .total_cmp(&best_score)
                .then(best_cost.total_cmp(&entry.cost_per_query))
                .then(best_id.cmp(id))
                .is_gt(),
        };
        if better {
            best = Some((id, score, entry.cost_per_query));
        }
    }
    match best {
        Some((id, _, _)) => Ok(id.clone()),
        None => Err(match registry.min_cost() {
            Some(cheapest_cost) => Error::BudgetExhausted {
                budget,
                cheapest_cost,
            },
            None => Error::NoAvailableModels,
        }),
    }
}

/// With probability `exploration_rate`, one affordable model other than
/// `chosen`, drawn uniformly. Deterministic in `(cfg.seed, request_id)`.
pub fn pick_comparison(
    chosen: &ModelId,
    affordable: &BTreeSet<ModelId>,
    request_id: &str,
    cfg: &RouterConfig,
) -> Option<ModelId> {
    let others: Vec<&ModelId> = affordable.iter().filter(|m| *m != chosen).collect();
    if others.is_empty() || cfg.exploration_rate <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(request_seed(cfg.seed, request_id));
    if rng.random::<f64>() >= cfg.exploration_rate {
        return None;
    }
    Some(others[rng.random_range(0..others.len())].clone())
}

/// FNV-1a over the request id, mixed with the router seed.
pub(crate) fn request_seed(seed: u64, request_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in request_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ seed.rotate_left(32))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Intermediate tables and the fused score of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScores {
    pub global_part: RatingTable,
    pub local_part: RatingTable,
    pub scores: BTreeMap<ModelId, f64>,
}

/// Global table (with every available model present), local table, and
/// their fusion for `query`.
pub fn fused_scores(
    query: &Embedding,
    global: &RatingTable,
    store: &FeedbackStore,
    registry: &ModelRegistry,
    cfg: &RouterConfig,
) -> Result<FusedScores> {
    let init = cfg.elo.initial_rating;
    let mut global_part = global.clone();
    for (id, _) in registry.available() {
        global_part.ensure_model(id, init);
    }
    let local_part = local_scores(query, &global_part, store, cfg)?;
    let scores = combined_scores(&global_part, &local_part, cfg.p_global, init)?;
    Ok(FusedScores {
        global_part,
        local_part,
        scores,
    })
}

/// Full decision for one request. Neither `global` nor `store` is modified.
pub fn route(
    request: &RoutingRequest,
    global: &RatingTable,
    store: &FeedbackStore,
    registry: &ModelRegistry,
    cfg: &RouterConfig,
) -> Result<RoutingDecision> {
    cfg.validate()?;
    if !request.budget.is_finite() || request.budget < 0.0 {
        return Err(Error::invalid(format!(
            "budget must be finite and non-negative, got {}",
            request.budget
        )));
    }
    let FusedScores {
        global_part,
        local_part,
        scores,
    } = fused_scores(&request.embedding, global, store, registry, cfg)?;
    let chosen = select(&scores, request.budget, registry)?;
    let affordable = registry.affordable(request.budget);
    debug_assert!(affordable.contains(&chosen));
    let comparison = pick_comparison(&chosen, &affordable, &request.request_id, cfg);
    Ok(RoutingDecision {
        request_id: request.request_id.clone(),
        chosen,
        scores,
        global_part,
        local_part,
        comparison,
        affordable,
    })
}
