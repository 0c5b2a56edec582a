//! Append-only feedback store with exact cosine nearest-neighbour search.
//!
//! Records are kept in insertion order, which is also timestamp order. When
//! the store is opened on a file every accepted record is appended to the
//! log as one JSON line and fsynced before `insert` returns.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::ModelId;
use crate::rating::MatchOutcome;

/// A finite, non-zero embedding vector with its Euclidean norm cached.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have at least one component"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding components must be finite"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Embedding { values, norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.values.len()))?;
        for v in &self.values {
            seq.serialize_element(v)?;
        }
        seq.end()
    }
}

/// Cosine similarity, clamped into [-1, 1].
pub fn cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(cosine_unchecked(u, v))
}

#[inline]
pub(crate) fn cosine_unchecked(u: &Embedding, v: &Embedding) -> f64 {
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    (dot / (u.norm * v.norm)).clamp(-1.0, 1.0)
}

/// One pairwise comparison between two models' responses to a query.
///
/// Serialized field order matches the on-disk log schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub record_id: u64,
    pub ts_ms: u64,
    pub model_a: ModelId,
    pub model_b: ModelId,
    pub outcome: MatchOutcome,
    pub embedding: Embedding,
    pub query_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub record_id: u64,
    pub similarity: f64,
}

/// Ordering used by every nearest-neighbour query: similarity descending,
/// then record id ascending.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.record_id.cmp(&b.record_id))
}

/// Keeps the `n` best neighbours under [`neighbor_order`], sorted.
pub(crate) fn top_n(mut all: Vec<Neighbor>, n: usize) -> Vec<Neighbor> {
    if n == 0 {
        return Vec::new();
    }
    if n < all.len() {
        all.select_nth_unstable_by(n - 1, neighbor_order);
        all.truncate(n);
    }
    all.sort_unstable_by(neighbor_order);
    all
}

struct LogWriter {
    path: PathBuf,
    file: File,
}

pub struct FeedbackStore {
    dim: usize,
    records: Vec<FeedbackRecord>,
    positions: HashMap<u64, usize>,
    max_id: u64,
    log: Option<LogWriter>,
    exec: Exec,
}

impl std::fmt::Debug for FeedbackStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackStore")
            .field("dim", &self.dim)
            .field("len", &self.records.len())
            .field("log", &self.log.as_ref().map(|l| &l.path))
            .finish()
    }
}

impl FeedbackStore {
    /// In-memory store for embeddings of dimension `dim`.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        Ok(FeedbackStore {
            dim,
            records: Vec::new(),
            positions: HashMap::new(),
            max_id: 0,
            log: None,
            exec: Exec::default(),
        })
    }

    /// Opens (or creates) a file-backed store. A torn final line left by a
    /// crash mid-append is cut off; any other malformed line is an error.
    pub fn open(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut store = FeedbackStore::new(dim)?;
        if path.exists() {
            let valid_len = read_log_into(path, &mut store, true)?;
            let file_len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
            if valid_len < file_len {
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                f.set_len(valid_len).map_err(|e| Error::io(path, e))?;
                f.sync_all().map_err(|e| Error::io(path, e))?;
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.seek(SeekFrom::End(0))
            .map_err(|e| Error::io(path, e))?;
        store.log = Some(LogWriter {
            path: path.to_owned(),
            file,
        });
        Ok(store)
    }

    /// Loads a snapshot into an in-memory store. Any malformed line,
    /// including a truncated last line, fails the whole load.
    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let mut store = FeedbackStore::new(dim)?;
        read_log_into(path.as_ref(), &mut store, false)?;
        Ok(store)
    }

    /// Writes every record to `path` via a fsynced temporary file and an
    /// atomic rename.
    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        write_log_atomic(path.as_ref(), &self.records)
    }

    /// Copy of the records without the file handle.
    pub fn to_in_memory(&self) -> FeedbackStore {
        FeedbackStore {
            dim: self.dim,
            records: self.records.clone(),
            positions: self.positions.clone(),
            max_id: self.max_id,
            log: None,
            exec: self.exec,
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn get(&self, record_id: u64) -> Option<&FeedbackRecord> {
        self.positions.get(&record_id).map(|&i| &self.records[i])
    }

    pub fn last_ts_ms(&self) -> Option<u64> {
        self.records.last().map(|r| r.ts_ms)
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    /// Id the store would assign to a record submitted with `record_id = 0`.
    pub fn next_id(&self) -> u64 {
        self.max_id + 1
    }

    /// Checks `record` against the store without inserting it.
    pub fn validate(&self, record: &FeedbackRecord) -> Result<()> {
        if record.embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: record.embedding.dim(),
            });
        }
        if record.model_a == record.model_b {
            return Err(Error::invalid(format!(
                "model_a and model_b are both {}",
                record.model_a
            )));
        }
        if record.record_id != 0 && self.positions.contains_key(&record.record_id) {
            return Err(Error::DuplicateRecord(record.record_id));
        }
        if let Some(last) = self.last_ts_ms() {
            if record.ts_ms < last {
                return Err(Error::StaleFeedback {
                    record_id: record.record_id,
                    ts_ms: record.ts_ms,
                    last_ts_ms: last,
                });
            }
        }
        Ok(())
    }

    /// Appends `record`, assigning the next free id when `record_id` is 0.
    /// For file-backed stores the log line is durable before this returns.
    pub fn insert(&mut self, mut record: FeedbackRecord) -> Result<u64> {
        self.validate(&record)?;
        if record.record_id == 0 {
            record.record_id = self.next_id();
        }
        if let Some(log) = &mut self.log {
            let mut line = serde_json::to_vec(&record)
                .map_err(|e| Error::invalid(format!("cannot encode record: {e}")))?;
            line.push(b'\n');
            log.file
                .write_all(&line)
                .and_then(|_| log.file.sync_data())
                .map_err(|e| Error::io(&log.path, e))?;
        }
        Ok(self.push(record))
    }

    fn push(&mut self, record: FeedbackRecord) -> u64 {
        let id = record.record_id;
        self.max_id = self.max_id.max(id);
        self.positions.insert(id, self.records.len());
        self.records.push(record);
        id
    }

    /// The `min(n, len)` stored records most similar to `query`.
    pub fn knn(&self, query: &Embedding, n: usize) -> Result<Vec<Neighbor>> {
        self.knn_with(query, n, self.exec)
    }

    pub fn knn_with(&self, query: &Embedding, n: usize, exec: Exec) -> Result<Vec<Neighbor>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let all = exec.map(&self.records, |r| Neighbor {
            record_id: r.record_id,
            similarity: cosine_unchecked(query, &r.embedding),
        });
        Ok(top_n(all, n))
    }

    /// Neighbours paired with their records.
    pub fn knn_records(
        &self,
        query: &Embedding,
        n: usize,
    ) -> Result<Vec<(Neighbor, &FeedbackRecord)>> {
        Ok(self
            .knn(query, n)?
            .into_iter()
            .map(|nb| (nb, &self.records[self.positions[&nb.record_id]]))
            .collect())
    }
}

/// Reads records into `store`, returning the byte length of the valid prefix.
fn read_log_into(path: &Path, store: &mut FeedbackStore, allow_torn_tail: bool) -> Result<u64> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut line_no = 0;
    let mut valid_len = 0u64;
    loop {
        line.clear();
        let read = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if read == 0 {
            break;
        }
        line_no += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            valid_len += read as u64;
            continue;
        }
        let parsed = serde_json::from_str::<FeedbackRecord>(line.trim_end())
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if complete {
                    Ok(r)
                } else {
                    Err("line is not newline-terminated".to_owned())
                }
            });
        let record = match parsed {
            Ok(r) => r,
            Err(_) if allow_torn_tail && !complete => break,
            Err(message) => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no,
                    message,
                })
            }
        };
        if record.record_id == 0 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: line_no,
                message: "record_id 0 is reserved".into(),
            });
        }
        store.validate(&record).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        store.push(record);
        valid_len += read as u64;
    }
    Ok(valid_len)
}

/// Streams records from a log file without holding them in memory.
pub fn for_each_record(
    path: impl AsRef<Path>,
    mut f: impl FnMut(usize, FeedbackRecord) -> Result<()>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<FeedbackRecord>(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        f(i + 1, record)?;
    }
    Ok(())
}

pub(crate) fn write_log_atomic(path: &Path, records: &[FeedbackRecord]) -> Result<()> {
    write_atomic(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Writes `path` via a sibling temporary file, fsync, and rename.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        let file = w.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
