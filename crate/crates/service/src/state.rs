use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::http::StatusCode;
use eagle_core::store::write_atomic;
use eagle_core::{
    compute_global, route, EloConfig, Embedding, Error, FeedbackRecord, FeedbackStore,
    MatchOutcome, ModelEntry, ModelId, ModelRegistry, RatingTable, RouterConfig, RoutingDecision,
    RoutingRequest,
};
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingClient, EmbeddingClientConfig};
use crate::error::ApiError;

pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";
pub const RATINGS_FILE: &str = "ratings.json";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const DEFAULT_DIM: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub router: RouterConfig,
    pub dim: usize,
    pub embed: Option<EmbeddingClientConfig>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            router: RouterConfig::default(),
            dim: DEFAULT_DIM,
            embed: None,
        }
    }

    pub fn validate(&self) -> eagle_core::Result<()> {
        self.router.validate()?;
        if self.router.elo.permutations != 0 {
            return Err(Error::InvalidConfig(
                "the service updates ratings online and needs permutations = 0".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        if let Some(e) = &self.embed {
            if e.expected_dim != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: e.expected_dim,
                });
            }
        }
        Ok(())
    }
}

/// Contents of `ratings.json`: the table together with the settings needed
/// to re-derive it from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsFile {
    pub elo: EloConfig,
    pub table: RatingTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub text: Option<String>,
    pub budget: f64,
    #[serde(default)]
    pub request_id: Option<String>,
}

/// Feedback body. Same field names as a log record; `record_id` and `ts_ms`
/// may be omitted and are then assigned by the service. The embedding may
/// be replaced by `query_text` when an embedding client is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    #[serde(default)]
    pub record_id: Option<u64>,
    #[serde(default)]
    pub ts_ms: Option<u64>,
    pub model_a: ModelId,
    pub model_b: ModelId,
    pub outcome: MatchOutcome,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub query_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub record_id: u64,
    pub ts_ms: u64,
    pub updated_ratings: BTreeMap<ModelId, f64>,
    pub matches_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub cost_per_query: f64,
    #[serde(default)]
    pub available: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRequest {
    /// Target directory; relative paths resolve under `data_dir/snapshots`.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreRequest {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub path: PathBuf,
    pub records: usize,
    pub models: usize,
    pub matches_seen: u64,
}

struct State {
    global: RatingTable,
    store: FeedbackStore,
    registry: ModelRegistry,
}

/// Serving state. Reads share a lock; every mutation holds it exclusively,
/// so updates are applied one at a time and readers never see a half-applied
/// change.
pub struct Service {
    cfg: ServiceConfig,
    state: RwLock<State>,
    embedder: Option<EmbeddingClient>,
    request_seq: AtomicU64,
    snapshot_seq: AtomicU64,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> eagle_core::Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> eagle_core::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })
}

impl Service {
    /// Opens the data directory, creating it if needed, and rebuilds the
    /// global table by replaying the feedback log.
    pub fn open(cfg: ServiceConfig) -> eagle_core::Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.data_dir).map_err(|source| Error::Io {
            path: cfg.data_dir.clone(),
            source,
        })?;
        let store = FeedbackStore::open(cfg.data_dir.join(FEEDBACK_FILE), cfg.dim)?;
        let registry_path = cfg.data_dir.join(REGISTRY_FILE);
        let registry = if registry_path.exists() {
            read_json(&registry_path)?
        } else {
            ModelRegistry::default()
        };
        let global = compute_global(store.records(), &cfg.router.elo)?;
        let embedder = match &cfg.embed {
            Some(e) => Some(
                EmbeddingClient::new(e.clone()).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            ),
            None => None,
        };
        let service = Service {
            state: RwLock::new(State {
                global,
                store,
                registry,
            }),
            cfg,
            embedder,
            request_seq: AtomicU64::new(0),
            snapshot_seq: AtomicU64::new(0),
        };
        service.write_ratings(&service.read().global)?;
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn embedder(&self) -> Option<&EmbeddingClient> {
        self.embedder.as_ref()
    }

    fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().expect("service state lock poisoned")
    }

    fn write(&self) -> RwLockWriteGuard<'_, State> {
        self.state.write().expect("service state lock poisoned")
    }

    /// Refreshes `ratings.json` via rename but without fsync: it is derived
    /// from the log and rebuilt on every start, so only the log pays for
    /// durability.
    fn write_ratings(&self, table: &RatingTable) -> eagle_core::Result<()> {
        let file = RatingsFile {
            elo: self.cfg.router.elo,
            table: table.clone(),
        };
        let path = self.cfg.data_dir.join(RATINGS_FILE);
        let tmp = self.cfg.data_dir.join(format!(".{RATINGS_FILE}.tmp"));
        let mut body =
            serde_json::to_vec_pretty(&file).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        body.push(b'\n');
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|source| Error::Io { path, source })
    }

    pub fn embedding_from(&self, values: Vec<f64>) -> Result<Embedding, ApiError> {
        let e = Embedding::new(values)?;
        if e.dim() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.dim,
                actual: e.dim(),
            }
            .into());
        }
        Ok(e)
    }

    pub fn route(
        &self,
        embedding: Embedding,
        budget: f64,
        request_id: Option<String>,
    ) -> Result<RoutingDecision, ApiError> {
        if embedding.dim() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.dim,
                actual: embedding.dim(),
            }
            .into());
        }
        let request_id = request_id
            .unwrap_or_else(|| format!("req-{}", self.request_seq.fetch_add(1, Ordering::Relaxed)));
        let request = RoutingRequest {
            embedding,
            budget,
            request_id,
        };
        let st = self.read();
        Ok(route(
            &request,
            &st.global,
            &st.store,
            &st.registry,
            &self.cfg.router,
        )?)
    }

    /// Validates, durably logs, and applies one feedback record. The
    /// response is returned only once the log line is on disk.
    pub fn feedback(
        &self,
        req: FeedbackRequest,
        embedding: Embedding,
    ) -> Result<FeedbackResponse, ApiError> {
        let mut st = self.write();
        let ts_ms = req
            .ts_ms
            .unwrap_or_else(|| now_ms().max(st.store.last_ts_ms().unwrap_or(0)));
        let record_id = match req.record_id {
            Some(id) if id != 0 => id,
            _ => st.store.next_id(),
        };
        let record = FeedbackRecord {
            record_id,
            ts_ms,
            model_a: req.model_a,
            model_b: req.model_b,
            outcome: req.outcome,
            embedding,
            query_text: req.query_text,
        };
        st.store.validate(&record)?;
        let mut next = st.global.clone();
        next.apply_record(&record, &self.cfg.router.elo)?;
        let updated_ratings = [&record.model_a, &record.model_b]
            .into_iter()
            .map(|m| {
                (
                    m.clone(),
                    next.get(m.as_str())
                        .unwrap_or(self.cfg.router.elo.initial_rating),
                )
            })
            .collect();
        st.store.insert(record)?;
        st.global = next;
        if let Err(e) = self.write_ratings(&st.global) {
            // The log is authoritative; the ratings file is rebuilt at startup.
            tracing::error!("could not refresh {RATINGS_FILE}: {e}");
        }
        Ok(FeedbackResponse {
            record_id,
            ts_ms,
            updated_ratings,
            matches_seen: st.global.matches_seen(),
        })
    }

    pub fn ratings(&self) -> RatingsFile {
        RatingsFile {
            elo: self.cfg.router.elo,
            table: self.read().global.clone(),
        }
    }

    pub fn registry(&self) -> ModelRegistry {
        self.read().registry.clone()
    }

    pub fn record_count(&self) -> usize {
        self.read().store.len()
    }

    fn commit_registry(&self, st: &mut State, next: ModelRegistry) -> Result<(), ApiError> {
        let before = st.registry.available().count();
        if before > 0 && next.available().next().is_none() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "last_available_model",
                "the change would leave no available models",
            ));
        }
        write_json(&self.cfg.data_dir.join(REGISTRY_FILE), &next)?;
        st.registry = next;
        Ok(())
    }

    pub fn put_model(&self, id: ModelId, update: ModelUpdate) -> Result<ModelEntry, ApiError> {
        let mut st = self.write();
        let available = update
            .available
            .or_else(|| st.registry.get(id.as_str()).map(|e| e.available))
            .unwrap_or(true);
        let mut next = st.registry.clone();
        next.upsert(id.clone(), update.cost_per_query, available)?;
        self.commit_registry(&mut st, next)?;
        Ok(*st.registry.get(id.as_str()).expect("just inserted"))
    }

    pub fn delete_model(&self, id: &str) -> Result<ModelEntry, ApiError> {
        let mut st = self.write();
        let mut next = st.registry.clone();
        let removed = next
            .remove(id)
            .ok_or_else(|| ApiError::from(Error::UnknownModel(ModelId::from(id))))?;
        self.commit_registry(&mut st, next)?;
        Ok(removed)
    }

    fn resolve_snapshot_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_owned()
        } else {
            self.cfg.data_dir.join(SNAPSHOT_DIR).join(path)
        }
    }

    /// Writes log, registry, and ratings into a snapshot directory. Readers
    /// continue meanwhile; writers wait.
    pub fn snapshot(&self, req: SnapshotRequest) -> Result<SnapshotInfo, ApiError> {
        let st = self.read();
        let path = match req.path {
            Some(p) => self.resolve_snapshot_path(&p),
            None => self.resolve_snapshot_path(Path::new(&format!(
                "snap-{}-{}",
                now_ms(),
                self.snapshot_seq.fetch_add(1, Ordering::Relaxed)
            ))),
        };
        fs::create_dir_all(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        st.store.snapshot(path.join(FEEDBACK_FILE))?;
        write_json(&path.join(REGISTRY_FILE), &st.registry)?;
        write_json(
            &path.join(RATINGS_FILE),
            &RatingsFile {
                elo: self.cfg.router.elo,
                table: st.global.clone(),
            },
        )?;
        Ok(SnapshotInfo {
            path,
            records: st.store.len(),
            models: st.registry.len(),
            matches_seen: st.global.matches_seen(),
        })
    }

    /// Replaces the live state with a snapshot after checking that its
    /// ratings equal a replay of its log. Anything unreadable or
    /// inconsistent is refused and leaves the live state untouched.
    pub fn restore(&self, req: RestoreRequest) -> Result<SnapshotInfo, ApiError> {
        let path = self.resolve_snapshot_path(&req.path);
        let corrupt = |e: Error| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "corrupt_snapshot",
                e.to_string(),
            )
        };
        let loaded =
            FeedbackStore::load(path.join(FEEDBACK_FILE), self.cfg.dim).map_err(corrupt)?;
        let registry: ModelRegistry = read_json(&path.join(REGISTRY_FILE)).map_err(corrupt)?;
        let ratings: RatingsFile = read_json(&path.join(RATINGS_FILE)).map_err(corrupt)?;
        let replayed = compute_global(loaded.records(), &self.cfg.router.elo).map_err(corrupt)?;
        if ratings.table != replayed {
            return Err(corrupt(Error::InvariantViolated(
                "snapshot ratings differ from a replay of its log".into(),
            )));
        }

        let mut st = self.write();
        let log_path = self.cfg.data_dir.join(FEEDBACK_FILE);
        loaded.snapshot(&log_path)?;
        let store = FeedbackStore::open(&log_path, self.cfg.dim)?;
        write_json(&self.cfg.data_dir.join(REGISTRY_FILE), &registry)?;
        self.write_ratings(&replayed)?;
        *st = State {
            global: replayed,
            store,
            registry,
        };
        Ok(SnapshotInfo {
            path,
            records: st.store.len(),
            models: st.registry.len(),
            matches_seen: st.global.matches_seen(),
        })
    }
}
