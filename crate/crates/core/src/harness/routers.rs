//! Routing procedures evaluated by the harness.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::dataset::Dataset;
use crate::baselines::KnnBaseline;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::ModelId;
use crate::rating::{compute_global, extend_in_place, EloConfig, RatingTable};
use crate::router::{fused_scores, select, ModelRegistry, RouterConfig};
use crate::store::{FeedbackRecord, FeedbackStore};

/// A router under evaluation: for one dataset record and a budget grid,
/// the model it would pick at each budget (`None` when nothing fits).
pub trait Router: Sync {
    fn name(&self) -> &str;

    fn choose(
        &self,
        dataset: &Dataset,
        index: usize,
        budgets: &[f64],
    ) -> Result<Vec<Option<ModelId>>>;
}

/// Applies the shared selection rule at every budget.
pub fn choose_by_scores(
    scores: &BTreeMap<ModelId, f64>,
    budgets: &[f64],
    registry: &ModelRegistry,
) -> Result<Vec<Option<ModelId>>> {
    budgets
        .iter()
        .map(|&b| match select(scores, b, registry) {
            Ok(m) => Ok(Some(m)),
            Err(Error::BudgetExhausted { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Global table plus feedback store: the whole trained state of the ELO
/// router.
#[derive(Debug)]
pub struct EagleModel {
    pub global: RatingTable,
    pub store: FeedbackStore,
}

impl EagleModel {
    pub fn build(records: &[FeedbackRecord], dim: usize, elo: &EloConfig) -> Result<Self> {
        let global = compute_global(records, elo)?;
        let store = build_store(records, dim)?;
        Ok(EagleModel { global, store })
    }

    /// Incremental update of the global table followed by store appends.
    pub fn extend(&mut self, records: &[FeedbackRecord], elo: &EloConfig) -> Result<()> {
        extend_in_place(&mut self.global, records, elo)?;
        append_to_store(&mut self.store, records)
    }
}

pub(crate) fn build_store(records: &[FeedbackRecord], dim: usize) -> Result<FeedbackStore> {
    // The harness parallelises across queries; inner scans stay sequential.
    let mut store = FeedbackStore::new(dim)?.with_exec(Exec::Sequential);
    append_to_store(&mut store, records)?;
    Ok(store)
}

pub(crate) fn append_to_store(store: &mut FeedbackStore, records: &[FeedbackRecord]) -> Result<()> {
    for r in records {
        store.insert(r.clone())?;
    }
    Ok(())
}

pub struct EagleRouter {
    name: String,
    model: Arc<EagleModel>,
    cfg: RouterConfig,
}

impl EagleRouter {
    pub fn new(name: impl Into<String>, model: Arc<EagleModel>, cfg: RouterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(EagleRouter {
            name: name.into(),
            model,
            cfg,
        })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.cfg
    }
}

impl Router for EagleRouter {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(
        &self,
        dataset: &Dataset,
        index: usize,
        budgets: &[f64],
    ) -> Result<Vec<Option<ModelId>>> {
        let fused = fused_scores(
            &dataset.records[index].embedding,
            &self.model.global,
            &self.model.store,
            &dataset.registry,
            &self.cfg,
        )?;
        choose_by_scores(&fused.scores, budgets, &dataset.registry)
    }
}

pub struct KnnRouter {
    name: String,
    baseline: KnnBaseline,
}

impl KnnRouter {
    pub fn new(name: impl Into<String>, baseline: KnnBaseline) -> Self {
        KnnRouter {
            name: name.into(),
            baseline,
        }
    }
}

impl Router for KnnRouter {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(
        &self,
        dataset: &Dataset,
        index: usize,
        budgets: &[f64],
    ) -> Result<Vec<Option<ModelId>>> {
        let preds = self.baseline.predict(&dataset.records[index].embedding)?;
        choose_by_scores(&preds, budgets, &dataset.registry)
    }
}

/// Picks uniformly among affordable models: each query draws a seeded
/// preference order and takes the first affordable model in it.
pub struct RandomRouter {
    seed: u64,
}

impl RandomRouter {
    pub fn new(seed: u64) -> Self {
        RandomRouter { seed }
    }
}

impl Router for RandomRouter {
    fn name(&self) -> &str {
        "random"
    }

    fn choose(
        &self,
        dataset: &Dataset,
        index: usize,
        budgets: &[f64],
    ) -> Result<Vec<Option<ModelId>>> {
        let mut order: Vec<(&ModelId, f64)> = dataset
            .registry
            .available()
            .map(|(id, e)| (id, e.cost_per_query))
            .collect();
        let seed = crate::router::splitmix64(self.seed ^ (index as u64).wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(budgets
            .iter()
            .map(|&b| {
                order
                    .iter()
                    .find(|(_, c)| *c <= b)
                    .map(|(id, _)| (*id).clone())
            })
            .collect())
    }
}

/// Knows the true quality of every answer.
pub struct OracleRouter;

impl Router for OracleRouter {
    fn name(&self) -> &str {
        "oracle"
    }

    fn choose(
        &self,
        dataset: &Dataset,
        index: usize,
        budgets: &[f64],
    ) -> Result<Vec<Option<ModelId>>> {
        choose_by_scores(
            &dataset.records[index].qualities,
            budgets,
            &dataset.registry,
        )
    }
}

/// Router backed by per-record predictions computed elsewhere, e.g. by a
/// trained regression baseline. File format, one object per line:
/// `{"index":usize,"predictions":{"model":f64,...}}`.
pub struct ExternalRouter {
    name: String,
    predictions: BTreeMap<usize, BTreeMap<ModelId, f64>>,
}

#[derive(Deserialize)]
struct PredictionLine {
    index: usize,
    predictions: BTreeMap<ModelId, f64>,
}

impl ExternalRouter {
    pub fn new(
        name: impl Into<String>,
        predictions: BTreeMap<usize, BTreeMap<ModelId, f64>>,
    ) -> Self {
        ExternalRouter {
            name: name.into(),
            predictions,
        }
    }

    pub fn load(name: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut predictions = BTreeMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?;
            predictions.insert(p.index, p.predictions);
        }
        Ok(ExternalRouter::new(name, predictions))
    }
}

impl Router for ExternalRouter {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(
        &self,
        dataset: &Dataset,
        index: usize,
        budgets: &[f64],
    ) -> Result<Vec<Option<ModelId>>> {
        let preds = self.predictions.get(&index).ok_or_else(|| {
            Error::invalid(format!(
                "router {} has no prediction for record {index}",
                self.name
            ))
        })?;
        choose_by_scores(preds, budgets, &dataset.registry)
    }
}
