//! Seeded synthetic routing data with planted cluster specialisation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split, DEFAULT_TRAIN_FRACTION};
use crate::baselines::QualityRecord;
use crate::error::{Error, Result};
use crate::model::ModelId;
use crate::router::ModelRegistry;
use crate::store::Embedding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CostPolicy {
    /// Costs spread evenly over `[min, max]` in order of mean quality, so the
    /// best model on average is the most expensive.
    ByQuality { min: f64, max: f64 },
    /// One cost per model, in model order.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_models: usize,
    pub num_clusters: usize,
    pub queries_per_cluster: usize,
    pub embedding_dim: usize,
    /// Per-model logit offset, indexed like the model ids.
    pub global_skill: Vec<f64>,
    /// `cluster_bonus[model][cluster]` logit offset.
    pub cluster_bonus: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    /// Standard deviation of the per-component jitter around a unit-norm
    /// cluster centre, scaled by `1/sqrt(dim)`.
    pub jitter: f64,
    pub costs: CostPolicy,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Evenly spread global skills and seeded N(0, 1) cluster bonuses.
    pub fn new(
        num_models: usize,
        num_clusters: usize,
        queries_per_cluster: usize,
        embedding_dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b0b5);
        let global_skill = (0..num_models)
            .map(|i| {
                if num_models > 1 {
                    -0.5 + i as f64 / (num_models - 1) as f64
                } else {
                    0.0
                }
            })
            .collect();
        let cluster_bonus = (0..num_models)
            .map(|_| {
                (0..num_clusters)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        SyntheticConfig {
            num_models,
            num_clusters,
            queries_per_cluster,
            embedding_dim,
            global_skill,
            cluster_bonus,
            noise_sigma: 0.05,
            jitter: 0.1,
            costs: CostPolicy::ByQuality { min: 0.1, max: 1.0 },
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed,
        }
    }

    /// Two equally skilled models, two clusters, each model strong on one
    /// cluster and weak on the other; noise-free.
    pub fn opposing_two_cluster(
        queries_per_cluster: usize,
        embedding_dim: usize,
        seed: u64,
    ) -> Self {
        SyntheticConfig {
            global_skill: vec![0.0, 0.0],
            cluster_bonus: vec![vec![1.5, -1.5], vec![-1.5, 1.5]],
            noise_sigma: 0.0,
            costs: CostPolicy::Explicit(vec![0.5, 1.0]),
            ..SyntheticConfig::new(2, 2, queries_per_cluster, embedding_dim, seed)
        }
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        (0..self.num_models)
            .map(|i| ModelId::new(format!("model-{i}")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_models < 2 {
            return Err(Error::config("need at least 2 models"));
        }
        if self.num_clusters < 1 || self.queries_per_cluster < 1 {
            return Err(Error::config(
                "need at least one cluster and one query per cluster",
            ));
        }
        if self.embedding_dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        if self.global_skill.len() != self.num_models
            || self.cluster_bonus.len() != self.num_models
            || self
                .cluster_bonus
                .iter()
                .any(|b| b.len() != self.num_clusters)
        {
            return Err(Error::config(
                "skill/bonus tables do not match model and cluster counts",
            ));
        }
        let finite = self
            .global_skill
            .iter()
            .chain(self.cluster_bonus.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("skills and bonuses must be finite"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be non-negative"));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::config("jitter must be non-negative"));
        }
        match &self.costs {
            CostPolicy::ByQuality { min, max }
                if !(min.is_finite() && *min >= 0.0 && max > min) =>
            {
                Err(Error::config("cost range must satisfy 0 <= min < max"))
            }
            CostPolicy::Explicit(c) if c.len() != self.num_models => {
                Err(Error::config("need one explicit cost per model"))
            }
            _ => Ok(()),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unit-norm cluster centres, orthogonalised against each other while the
/// dimension allows it.
fn cluster_centres(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centres.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if centres.len() < dim {
            for c in &centres {
                let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= proj * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        centres.push(v);
    }
    centres
}

pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.embedding_dim;
    let centres = cluster_centres(cfg.num_clusters, dim, &mut rng);
    let ids = cfg.model_ids();
    let scale = cfg.jitter / (dim as f64).sqrt();

    let mut rows: Vec<(usize, Embedding, BTreeMap<ModelId, f64>)> = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..cfg.queries_per_cluster {
            let vector = loop {
                let v: Vec<f64> = centre
                    .iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + scale * z
                    })
                    .collect();
                if let Ok(e) = Embedding::new(v) {
                    break e;
                }
            };
            let qualities = ids
                .iter()
                .enumerate()
                .map(|(m, id)| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let q = sigmoid(cfg.global_skill[m] + cfg.cluster_bonus[m][c])
                        + cfg.noise_sigma * noise;
                    (id.clone(), q.clamp(0.0, 1.0))
                })
                .collect();
            rows.push((c, vector, qualities));
        }
    }
    rows.shuffle(&mut rng);

    let mut labels = Vec::with_capacity(rows.len());
    let records: Vec<QualityRecord> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (c, embedding, qualities))| {
            labels.push(c);
            QualityRecord {
                embedding,
                qualities,
                ts_ms: 1_000 + i as u64,
            }
        })
        .collect();

    let costs = match &cfg.costs {
        CostPolicy::Explicit(c) => c.clone(),
        CostPolicy::ByQuality { min, max } => {
            let means: Vec<f64> = ids
                .iter()
                .map(|id| {
                    records.iter().map(|r| r.qualities[id]).sum::<f64>() / records.len() as f64
                })
                .collect();
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
            let mut costs = vec![0.0; ids.len()];
            for (rank, &m) in order.iter().enumerate() {
                costs[m] = min + (max - min) * rank as f64 / (ids.len() - 1) as f64;
            }
            costs
        }
    };
    let registry = ModelRegistry::new(ids.iter().cloned().zip(costs))?;
    let split = Split::random(&records, cfg.train_fraction, cfg.seed.wrapping_add(1))?;
    let mut ds = Dataset::new(records, registry, split)?;
    ds.labels = Some(labels);
    Ok(ds)
}
