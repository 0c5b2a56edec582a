//! Comparison routers: kNN quality regression, plus the true-quality oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::ModelId;
use crate::router::{select, ModelRegistry};
use crate::store::{top_n, Embedding, Neighbor};

pub const DEFAULT_KNN_K: usize = 40;

/// A query with the ground-truth quality of every model's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRecord {
    pub embedding: Embedding,
    pub qualities: BTreeMap<ModelId, f64>,
    pub ts_ms: u64,
}

impl QualityRecord {
    pub fn quality(&self, model: &str) -> Option<f64> {
        self.qualities.get(model).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnBaselineConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for KnnBaselineConfig {
    fn default() -> Self {
        KnnBaselineConfig {
            k: DEFAULT_KNN_K,
            seed: 0,
        }
    }
}

/// Fitted kNN regressor: embeddings packed row-major with their norms, and a
/// dense quality matrix in model order.
#[derive(Debug, Clone)]
pub struct KnnBaseline {
    k: usize,
    dim: usize,
    models: Vec<ModelId>,
    rows: Vec<f64>,
    norms: Vec<f64>,
    qualities: Vec<f64>,
}

impl KnnBaseline {
    /// Builds the regressor from scratch over `train`. The model set is taken
    /// from the first record; every record must score exactly those models.
    pub fn fit(train: &[QualityRecord], cfg: &KnnBaselineConfig) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        let first = train.first().ok_or(Error::EmptyTrainingSet)?;
        let dim = first.embedding.dim();
        let models: Vec<ModelId> = first.qualities.keys().cloned().collect();
        let mut rows = Vec::with_capacity(train.len() * dim);
        let mut norms = Vec::with_capacity(train.len());
        let mut qualities = Vec::with_capacity(train.len() * models.len());
        for (i, rec) in train.iter().enumerate() {
            if rec.embedding.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: rec.embedding.dim(),
                });
            }
            if rec.qualities.len() != models.len() {
                return Err(Error::invalid(format!(
                    "training record {i} scores {} models, expected {}",
                    rec.qualities.len(),
                    models.len()
                )));
            }
            rows.extend_from_slice(rec.embedding.as_slice());
            norms.push(rec.embedding.norm());
            for m in &models {
                let q = rec.quality(m.as_str()).ok_or_else(|| {
                    Error::invalid(format!("training record {i} lacks model {m}"))
                })?;
                qualities.push(q);
            }
        }
        Ok(KnnBaseline {
            k: cfg.k,
            dim,
            models,
            rows,
            norms,
            qualities,
        })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    /// The `min(k, n)` nearest training rows; `record_id` is the row index.
    pub fn neighbors(&self, query: &Embedding, exec: Exec) -> Result<Vec<Neighbor>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let q = query.as_slice();
        let qn = query.norm();
        let all = exec.map_range(self.len(), |i| {
            let row = &self.rows[i * self.dim..(i + 1) * self.dim];
            let dot: f64 = q.iter().zip(row).map(|(a, b)| a * b).sum();
            Neighbor {
                record_id: i as u64,
                similarity: (dot / (qn * self.norms[i])).clamp(-1.0, 1.0),
            }
        });
        Ok(top_n(all, self.k))
    }

    /// Mean quality per model over the nearest neighbours.
    pub fn predict(&self, query: &Embedding) -> Result<BTreeMap<ModelId, f64>> {
        self.predict_with(query, Exec::Sequential)
    }

    pub fn predict_with(&self, query: &Embedding, exec: Exec) -> Result<BTreeMap<ModelId, f64>> {
        let neighbors = self.neighbors(query, exec)?;
        let m = self.models.len();
        let mut sums = vec![0.0; m];
        for nb in &neighbors {
            let row = nb.record_id as usize;
            for (j, s) in sums.iter_mut().enumerate() {
                *s += self.qualities[row * m + j];
            }
        }
        let count = neighbors.len() as f64;
        Ok(self
            .models
            .iter()
            .cloned()
            .zip(sums.into_iter().map(|s| s / count))
            .collect())
    }
}

/// One-shot fit and predict.
pub fn knn_predict(
    query: &Embedding,
    train: &[QualityRecord],
    cfg: &KnnBaselineConfig,
) -> Result<BTreeMap<ModelId, f64>> {
    KnnBaseline::fit(train, cfg)?.predict(query)
}

/// Same selection rule as the main router, applied to predicted qualities.
pub fn baseline_select(
    predictions: &BTreeMap<ModelId, f64>,
    budget: f64,
    registry: &ModelRegistry,
) -> Result<ModelId> {
    select(predictions, budget, registry)
}

/// Best true quality among affordable models.
pub fn oracle_select(
    record: &QualityRecord,
    budget: f64,
    registry: &ModelRegistry,
) -> Result<ModelId> {
    select(&record.qualities, budget, registry)
}
