use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::QualityRecord;
use crate::error::{Error, Result};
use crate::router::ModelRegistry;
use crate::store::write_atomic;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";

/// Indices into `Dataset::records`, each side sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded random split with `round(n * train_fraction)` training rows.
    pub fn random(records: &[QualityRecord], train_fraction: f64, seed: u64) -> Result<Split> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let n = records.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((n as f64) * train_fraction).round() as usize;
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        let by_time = |i: &usize| (records[*i].ts_ms, *i);
        train.sort_by_key(by_time);
        test.sort_by_key(by_time);
        Ok(Split { train, test })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let train: BTreeSet<usize> = self.train.iter().copied().collect();
        let test: BTreeSet<usize> = self.test.iter().copied().collect();
        if train.len() != self.train.len() || test.len() != self.test.len() {
            return Err(Error::invalid("split contains duplicate indices"));
        }
        if !train.is_disjoint(&test) {
            return Err(Error::invalid("train and test splits overlap"));
        }
        if train.len() + test.len() != n || train.iter().chain(&test).any(|&i| i >= n) {
            return Err(Error::invalid("split does not cover the dataset exactly"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<QualityRecord>,
    pub registry: ModelRegistry,
    pub split: Split,
    /// Generating cluster of each record, when known (synthetic data only).
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(records: Vec<QualityRecord>, registry: ModelRegistry, split: Split) -> Result<Self> {
        registry.validate()?;
        let dim = records.first().map(|r| r.embedding.dim());
        for (i, r) in records.iter().enumerate() {
            if Some(r.embedding.dim()) != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim.unwrap_or(0),
                    actual: r.embedding.dim(),
                });
            }
            if r.qualities.len() != registry.len() {
                return Err(Error::invalid(format!(
                    "record {i} scores {} models, registry has {}",
                    r.qualities.len(),
                    registry.len()
                )));
            }
            for (m, q) in &r.qualities {
                if registry.get(m.as_str()).is_none() {
                    return Err(Error::UnknownModel(m.clone()));
                }
                if !(0.0..=1.0).contains(q) {
                    return Err(Error::invalid(format!(
                        "record {i}: quality {q} for {m} outside [0, 1]"
                    )));
                }
            }
        }
        split.validate(records.len())?;
        Ok(Dataset {
            records,
            registry,
            split,
            labels: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.embedding.dim())
    }

    pub fn train_records(&self) -> impl Iterator<Item = &QualityRecord> {
        self.split.train.iter().map(|&i| &self.records[i])
    }

    pub fn test_records(&self) -> impl Iterator<Item = &QualityRecord> {
        self.split.test.iter().map(|&i| &self.records[i])
    }

    /// Reads a line-delimited record file and a registry file, then splits
    /// with `train_fraction` under `split_seed`.
    pub fn load(
        dataset_path: impl AsRef<Path>,
        registry_path: impl AsRef<Path>,
        train_fraction: f64,
        split_seed: u64,
    ) -> Result<Self> {
        let registry_path = registry_path.as_ref();
        let registry: ModelRegistry = {
            let f = File::open(registry_path).map_err(|e| Error::io(registry_path, e))?;
            serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Parse {
                path: registry_path.to_owned(),
                line: e.line(),
                message: e.to_string(),
            })?
        };
        let records = read_records(dataset_path.as_ref())?;
        let split = Split::random(&records, train_fraction, split_seed)?;
        Dataset::new(records, registry, split)
    }

    /// Writes `dataset.jsonl` and `registry.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(DATASET_FILE), |w| {
            for r in &self.records {
                serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
        write_atomic(&dir.join(REGISTRY_FILE), |w| {
            serde_json::to_writer_pretty(&mut *w, &self.registry).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        })
    }
}

fn read_records(path: &Path) -> Result<Vec<QualityRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
