//! Versioned, append-only store of reasoning graphs.
//!
//! On disk a store is a directory:
//!
//! ```text
//! <root>/meta.json   format tag, embedding spec, feature dimension
//! <root>/log.jsonl   one record per line: "<byte length> <canonical json>\n"
//! <root>/index.bin   (graph_id, version) -> log offset; rebuilt from the log when stale
//! ```
//!
//! The log is the source of truth. Opening a store replays it; a torn final
//! record (a crash mid-append) is cut off, anything malformed before the tail
//! is reported as corruption. Readers work on [`RepoView`] snapshots, which
//! share entries with the writer and never observe later puts or prunes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingSpec};
use crate::graph::{NodeId, ReasoningGraph, Violation};
use crate::similarity::{similarity_prepared, similarity_upper_bound, PreparedGraph, SimilarityConfig};
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "memograph-store-v1";
const LOG_FILE: &str = "log.jsonl";
const INDEX_FILE: &str = "index.bin";
const META_FILE: &str = "meta.json";
const INDEX_MAGIC: &[u8; 8] = b"MGIDX001";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("graph {0:?} not found")]
    NotFound(String),
    #[error("graph {graph_id:?} has no version {version}")]
    VersionNotFound { graph_id: String, version: u32 },
    #[error("storage failure at {path}: {source}")]
    StorageFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error("store configuration mismatch: {0}")]
    Mismatch(String),
    #[error("refusing to store an invalid graph: {0:?}")]
    InvalidGraph(Vec<Violation>),
    #[error("a store already exists at {0}")]
    AlreadyExists(String),
}

fn storage(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::StorageFailure {
        path: path.display().to_string(),
        source,
    }
}

/// What a caller supplies to [`Store::put`]; version, signature and timestamp
/// are assigned by the store.
#[derive(Clone, Debug, Default)]
pub struct EntryContent {
    pub graph_id: String,
    pub graph: ReasoningGraph,
    pub task_embedding: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Per-node output signatures observed when the graph was executed.
    pub node_outputs: BTreeMap<NodeId, String>,
}

impl Default for ReasoningGraph {
    fn default() -> Self {
        ReasoningGraph::new(crate::graph::DEFAULT_DIM)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepositoryEntry {
    pub graph_id: String,
    pub version: u32,
    pub graph: ReasoningGraph,
    pub task_embedding: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub output_signature: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub node_outputs: BTreeMap<NodeId, String>,
    #[serde(default)]
    pub tombstone: bool,
}

impl RepositoryEntry {
    pub fn key(&self) -> (&str, u32) {
        (&self.graph_id, self.version)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum Record {
    Entry(RepositoryEntry),
    Tombstone { graph_id: String, version: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub format: String,
    pub embedding: EmbeddingSpec,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneStrategy {
    OldestFirst,
    LowestReuseCountFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub max_entries: usize,
    pub strategy: PruneStrategy,
}

/// A retrieval probe: the task embedding and, optionally, the plan fragment to match.
#[derive(Clone, Debug)]
pub struct TaskProbe {
    pub embedding: Vec<f64>,
    pub graph: Option<ReasoningGraph>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryParams {
    pub top_k: usize,
    pub tau_sim: f64,
    /// Depth of the descendant subgraph scored at every candidate anchor.
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub graph_id: String,
    pub version: u32,
    pub anchor: NodeId,
    pub score: f64,
    pub approx: bool,
}

/// Diagnostics from opening a store.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpenReport {
    pub records: usize,
    /// Bytes of a torn trailing record that were cut off.
    pub truncated_bytes: u64,
    pub index_rebuilt: bool,
}

pub(crate) struct Anchor {
    pub node: NodeId,
    pub prepared: PreparedGraph,
}

struct StoredEntry {
    entry: RepositoryEntry,
    anchors: Mutex<HashMap<usize, Arc<Vec<Anchor>>>>,
}

impl StoredEntry {
    fn new(entry: RepositoryEntry) -> Self {
        StoredEntry {
            entry,
            anchors: Mutex::new(HashMap::new()),
        }
    }

    fn anchors(&self, depth: usize) -> Arc<Vec<Anchor>> {
        let mut cache = self.anchors.lock().expect("anchor cache poisoned");
        cache
            .entry(depth)
            .or_insert_with(|| {
                let g = &self.entry.graph;
                Arc::new(
                    (0..g.len())
                        .map(|i| Anchor {
                            node: g.nodes()[i].id.clone(),
                            prepared: PreparedGraph::new(g.induced_by_positions(&g.reachable_within(i, depth))),
                        })
                        .collect(),
                )
            })
            .clone()
    }
}

#[derive(Clone, Default)]
struct State {
    entries: Vec<Arc<StoredEntry>>,
    by_id: BTreeMap<String, Vec<usize>>,
    offsets: Vec<u64>,
}

impl State {
    fn position(&self, graph_id: &str, version: u32) -> Option<usize> {
        let versions = self.by_id.get(graph_id)?;
        versions.get((version as usize).checked_sub(1)?).copied()
    }

    fn apply(&mut self, record: Record, offset: u64) -> std::result::Result<(), String> {
        match record {
            Record::Entry(e) => {
                let expected = self.by_id.get(&e.graph_id).map_or(1, |v| v.len() as u32 + 1);
                if e.version != expected {
                    return Err(format!("{} has version {}, expected {}", e.graph_id, e.version, expected));
                }
                if e.output_signature != e.graph.canonical_hash() {
                    return Err(format!("{}@{} signature does not match its graph", e.graph_id, e.version));
                }
                self.by_id.entry(e.graph_id.clone()).or_default().push(self.entries.len());
                self.entries.push(Arc::new(StoredEntry::new(e)));
                self.offsets.push(offset);
            }
            Record::Tombstone { graph_id, version } => {
                let pos = self
                    .position(&graph_id, version)
                    .ok_or_else(|| format!("tombstone for unknown {graph_id}@{version}"))?;
                let mut e = self.entries[pos].entry.clone();
                e.tombstone = true;
                self.entries[pos] = Arc::new(StoredEntry::new(e));
            }
        }
        Ok(())
    }
}

struct LogWriter {
    root: PathBuf,
    file: File,
    len: u64,
}

pub struct Store {
    meta: StoreMeta,
    writer: Mutex<Option<LogWriter>>,
    state: RwLock<Arc<State>>,
    report: OpenReport,
}

impl Store {
    /// A store without a backing directory (experiments, sweeps).
    pub fn in_memory(embedding: EmbeddingSpec) -> Self {
        Store {
            meta: StoreMeta {
                format: FORMAT_VERSION.into(),
                dim: embedding.dim,
                embedding,
            },
            writer: Mutex::new(None),
            state: RwLock::new(Arc::new(State::default())),
            report: OpenReport::default(),
        }
    }

    pub fn create(root: impl AsRef<Path>, embedding: EmbeddingSpec) -> Result<Self> {
        embedding.validate()?;
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| storage(root, e))?;
        let meta_path = root.join(META_FILE);
        if meta_path.exists() {
            return Err(StoreError::AlreadyExists(root.display().to_string()).into());
        }
        let meta = StoreMeta {
            format: FORMAT_VERSION.into(),
            dim: embedding.dim,
            embedding,
        };
        let body = serde_json::to_vec_pretty(&meta)?;
        fs::write(&meta_path, body).map_err(|e| storage(&meta_path, e))?;
        let log = root.join(LOG_FILE);
        File::create(&log).map_err(|e| storage(&log, e))?;
        Self::open(root)
    }

    /// Opens an existing store, checking it against the expected embedding.
    pub fn open_expecting(root: impl AsRef<Path>, expected: &EmbeddingSpec) -> Result<Self> {
        let store = Self::open(root)?;
        let have = &store.meta.embedding;
        if have.dim != expected.dim {
            return Err(StoreError::Mismatch(format!(
                "store dim is {} but {} was requested",
                have.dim, expected.dim
            ))
            .into());
        }
        if have.scheme != expected.scheme {
            return Err(StoreError::Mismatch(format!(
                "store embedding scheme is {} but {} was requested",
                have.scheme, expected.scheme
            ))
            .into());
        }
        if have.seed != expected.seed {
            return Err(StoreError::Mismatch(format!(
                "store embedding seed is {} but {} was requested",
                have.seed, expected.seed
            ))
            .into());
        }
        Ok(store)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let meta_path = root.join(META_FILE);
        let meta_bytes = fs::read(&meta_path).map_err(|e| storage(&meta_path, e))?;
        let meta: StoreMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| StoreError::Corrupt(format!("{}: {e}", meta_path.display())))?;
        if meta.format != FORMAT_VERSION {
            return Err(StoreError::Mismatch(format!(
                "store format is {:?} but this build reads {:?}",
                meta.format, FORMAT_VERSION
            ))
            .into());
        }
        if meta.dim != meta.embedding.dim {
            return Err(StoreError::Corrupt(format!(
                "meta.json dim {} disagrees with embedding dim {}",
                meta.dim, meta.embedding.dim
            ))
            .into());
        }

        let log_path = root.join(LOG_FILE);
        let mut bytes = Vec::new();
        File::open(&log_path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| storage(&log_path, e))?;
        let (records, good_len) = parse_log(&bytes)?;
        let mut state = State::default();
        let mut report = OpenReport {
            records: records.len(),
            truncated_bytes: bytes.len() as u64 - good_len,
            index_rebuilt: false,
        };
        for (offset, record) in records {
            state.apply(record, offset).map_err(StoreError::Corrupt)?;
        }
        for e in &state.entries {
            if e.entry.graph.dim() != meta.dim || e.entry.task_embedding.len() != meta.dim {
                return Err(StoreError::Corrupt(format!(
                    "{}@{} has dimension {} but the store uses {}",
                    e.entry.graph_id,
                    e.entry.version,
                    e.entry.graph.dim(),
                    meta.dim
                ))
                .into());
            }
        }

        let file = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| storage(&log_path, e))?;
        if report.truncated_bytes > 0 {
            file.set_len(good_len).map_err(|e| storage(&log_path, e))?;
        }
        let index_path = root.join(INDEX_FILE);
        if !index_matches(&index_path, &state, good_len) {
            write_index(&index_path, &state, good_len)?;
            report.index_rebuilt = true;
        }
        Ok(Store {
            meta,
            writer: Mutex::new(Some(LogWriter {
                root,
                file,
                len: good_len,
            })),
            state: RwLock::new(Arc::new(state)),
            report,
        })
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn open_report(&self) -> &OpenReport {
        &self.report
    }

    pub fn embedding(&self) -> &EmbeddingSpec {
        &self.meta.embedding
    }

    pub fn put(&self, content: EntryContent) -> Result<(String, u32)> {
        self.put_at(content, Utc::now())
    }

    /// [`Self::put`] with an explicit creation timestamp.
    pub fn put_at(&self, content: EntryContent, created_at: DateTime<Utc>) -> Result<(String, u32)> {
        let violations = content.graph.validate();
        if !violations.is_empty() {
            return Err(StoreError::InvalidGraph(violations).into());
        }
        if content.graph.dim() != self.meta.dim {
            return Err(Error::DimensionMismatch {
                expected: self.meta.dim,
                found: content.graph.dim(),
            });
        }
        if content.task_embedding.len() != self.meta.dim {
            return Err(Error::DimensionMismatch {
                expected: self.meta.dim,
                found: content.task_embedding.len(),
            });
        }
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        let current = self.state.read().expect("state lock poisoned").clone();
        let version = current.by_id.get(&content.graph_id).map_or(1, |v| v.len() as u32 + 1);
        let entry = RepositoryEntry {
            output_signature: content.graph.canonical_hash(),
            graph_id: content.graph_id,
            version,
            graph: content.graph,
            task_embedding: content.task_embedding,
            metrics: content.metrics,
            created_at,
            node_outputs: content.node_outputs,
            tombstone: false,
        };
        let key = (entry.graph_id.clone(), version);
        let record = Record::Entry(entry);
        let offset = match writer.as_mut() {
            Some(w) => append_record(w, &record)?,
            None => 0,
        };
        self.commit(record, offset, writer.as_mut())?;
        Ok(key)
    }

    fn commit(&self, record: Record, offset: u64, writer: Option<&mut LogWriter>) -> Result<()> {
        let mut guard = self.state.write().expect("state lock poisoned");
        let state = Arc::make_mut(&mut guard);
        state.apply(record, offset).map_err(StoreError::Corrupt)?;
        if let Some(w) = writer {
            write_index(&w.root.join(INDEX_FILE), state, w.len)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> RepoView {
        RepoView {
            state: self.state.read().expect("state lock poisoned").clone(),
            dim: self.meta.dim,
        }
    }

    pub fn get(&self, graph_id: &str, version: Option<u32>) -> Result<RepositoryEntry> {
        self.snapshot().get(graph_id, version).cloned()
    }

    /// Tombstones entries beyond `cfg.max_entries`. Returns what was tombstoned, in selection order.
    pub fn prune(&self, cfg: &PruneConfig) -> Result<Vec<(String, u32)>> {
        if cfg.max_entries == 0 {
            return Err(Error::InvalidConfig("max_entries must be >= 1".into()));
        }
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        let view = self.snapshot();
        let live: Vec<&RepositoryEntry> = view.live_entries().collect();
        if live.len() <= cfg.max_entries {
            return Ok(Vec::new());
        }
        let excess = live.len() - cfg.max_entries;
        // Log position is the final tie-break, so ordering is total.
        let mut ranked: Vec<(usize, &RepositoryEntry)> = live
            .iter()
            .map(|e| (view.state.position(&e.graph_id, e.version).expect("live entry is indexed"), *e))
            .collect();
        match cfg.strategy {
            PruneStrategy::OldestFirst => ranked.sort_by(|a, b| a.1.created_at.cmp(&b.1.created_at).then(a.0.cmp(&b.0))),
            PruneStrategy::LowestReuseCountFirst => {
                let counts = view.reuse_counts();
                let count = |e: &RepositoryEntry| counts.get(&(e.graph_id.clone(), e.version)).copied().unwrap_or(0);
                ranked.sort_by(|a, b| {
                    count(a.1)
                        .cmp(&count(b.1))
                        .then(a.1.created_at.cmp(&b.1.created_at))
                        .then(a.0.cmp(&b.0))
                });
            }
        }
        let victims: Vec<(String, u32)> = ranked
            .into_iter()
            .take(excess)
            .map(|(_, e)| (e.graph_id.clone(), e.version))
            .collect();
        for (graph_id, version) in &victims {
            let record = Record::Tombstone {
                graph_id: graph_id.clone(),
                version: *version,
            };
            let offset = match writer.as_mut() {
                Some(w) => append_record(w, &record)?,
                None => 0,
            };
            self.commit(record, offset, writer.as_mut())?;
        }
        Ok(victims)
    }
}

fn append_record(w: &mut LogWriter, record: &Record) -> Result<u64> {
    let json = serde_json::to_vec(record)?;
    let mut line = format!("{} ", json.len()).into_bytes();
    line.extend_from_slice(&json);
    line.push(b'\n');
    let path = w.root.join(LOG_FILE);
    w.file.write_all(&line).map_err(|e| storage(&path, e))?;
    w.file.sync_data().map_err(|e| storage(&path, e))?;
    let offset = w.len;
    w.len += line.len() as u64;
    Ok(offset)
}

/// Parses `<len> <json>\n` records. Returns the records with their offsets and
/// the length of the well-formed prefix; an incomplete final record is
/// excluded from that prefix.
fn parse_log(bytes: &[u8]) -> std::result::Result<(Vec<(u64, Record)>, u64), StoreError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let start = pos;
        let digits = bytes[pos..].iter().take_while(|b| b.is_ascii_digit()).count();
        let after = pos + digits;
        if after == bytes.len() {
            break; // torn inside the length prefix
        }
        if digits == 0 || bytes[after] != b' ' {
            return Err(StoreError::Corrupt(format!("bad record header at byte {start}")));
        }
        let len: usize = std::str::from_utf8(&bytes[pos..after])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| StoreError::Corrupt(format!("bad record length at byte {start}")))?;
        let body = after + 1;
        if body + len + 1 > bytes.len() {
            break; // torn body
        }
        if bytes[body + len] != b'\n' {
            return Err(StoreError::Corrupt(format!("record at byte {start} is not newline-terminated")));
        }
        let record: Record = serde_json::from_slice(&bytes[body..body + len])
            .map_err(|e| StoreError::Corrupt(format!("record at byte {start}: {e}")))?;
        out.push((start as u64, record));
        pos = body + len + 1;
    }
    Ok((out, pos as u64))
}

fn encode_index(state: &State, covered: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(INDEX_MAGIC);
    buf.extend_from_slice(&covered.to_le_bytes());
    buf.extend_from_slice(&(state.entries.len() as u32).to_le_bytes());
    for (e, off) in state.entries.iter().zip(&state.offsets) {
        let id = e.entry.graph_id.as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&e.entry.version.to_le_bytes());
        buf.extend_from_slice(&off.to_le_bytes());
    }
    buf
}

fn write_index(path: &Path, state: &State, covered: u64) -> Result<()> {
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, encode_index(state, covered)).map_err(|e| storage(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| storage(path, e))?;
    Ok(())
}

fn index_matches(path: &Path, state: &State, covered: u64) -> bool {
    fs::read(path).is_ok_and(|bytes| bytes == encode_index(state, covered))
}

/// Read-only, point-in-time view of a store.
#[derive(Clone)]
pub struct RepoView {
    state: Arc<State>,
    dim: usize,
}

impl RepoView {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of non-tombstoned entries.
    pub fn len(&self) -> usize {
        self.live_entries().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every entry, tombstoned or not, in log order.
    pub fn all_entries(&self) -> impl Iterator<Item = &RepositoryEntry> {
        self.state.entries.iter().map(|e| &e.entry)
    }

    pub fn live_entries(&self) -> impl Iterator<Item = &RepositoryEntry> {
        self.all_entries().filter(|e| !e.tombstone)
    }

    /// Exact version lookups succeed for tombstoned entries too; omitting the
    /// version selects the latest live one.
    pub fn get(&self, graph_id: &str, version: Option<u32>) -> Result<&RepositoryEntry> {
        let versions = self
            .state
            .by_id
            .get(graph_id)
            .ok_or_else(|| StoreError::NotFound(graph_id.to_string()))?;
        match version {
            Some(v) => self
                .state
                .position(graph_id, v)
                .map(|p| &self.state.entries[p].entry)
                .ok_or_else(|| {
                    StoreError::VersionNotFound {
                        graph_id: graph_id.to_string(),
                        version: v,
                    }
                    .into()
                }),
            None => versions
                .iter()
                .rev()
                .map(|&p| &self.state.entries[p].entry)
                .find(|e| !e.tombstone)
                .ok_or_else(|| StoreError::NotFound(graph_id.to_string()).into()),
        }
    }

    /// Number of reused nodes, across all stored graphs, citing each (graph_id, version).
    pub fn reuse_counts(&self) -> BTreeMap<(String, u32), usize> {
        let mut counts = BTreeMap::new();
        for e in self.all_entries() {
            for n in e.graph.nodes() {
                if let Some(o) = &n.origin {
                    *counts.entry((o.graph_id.clone(), o.version)).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    pub(crate) fn anchors(&self, graph_id: &str, version: u32, depth: usize) -> Option<Arc<Vec<Anchor>>> {
        let p = self.state.position(graph_id, version)?;
        Some(self.state.entries[p].anchors(depth))
    }

    /// Two-stage retrieval: an embedding prefilter keeps the `4 * top_k`
    /// closest entries, then every anchored descendant subgraph of those
    /// entries is scored against `probe.graph`. Results are at or above
    /// `tau_sim`, ordered by descending score, then `(graph_id, version, anchor)`.
    pub fn query(&self, probe: &TaskProbe, params: &QueryParams, cfg: &SimilarityConfig) -> Result<Vec<QueryResult>> {
        if probe.embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: probe.embedding.len(),
            });
        }
        if let Some(g) = &probe.graph {
            if g.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: g.dim(),
                });
            }
            if g.is_empty() {
                return Err(Error::EmptyGraph);
            }
        }
        if params.top_k == 0 {
            return Ok(Vec::new());
        }
        let mut stage1: Vec<(f64, &RepositoryEntry)> = self
            .live_entries()
            .filter(|e| !e.graph.is_empty())
            .map(|e| (cosine(&e.task_embedding, &probe.embedding), e))
            .collect();
        stage1.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.key().cmp(&b.1.key())));
        stage1.truncate(params.top_k.saturating_mul(4));

        let mut results: Vec<QueryResult> = Vec::new();
        match &probe.graph {
            None => {
                for (cos, e) in stage1 {
                    let score = ((1.0 + cos) / 2.0).clamp(0.0, 1.0);
                    if score >= params.tau_sim {
                        let root = e.graph.topological_order()?.remove(0);
                        results.push(QueryResult {
                            graph_id: e.graph_id.clone(),
                            version: e.version,
                            anchor: root,
                            score,
                            approx: false,
                        });
                    }
                }
                sort_results(&mut results);
                results.truncate(params.top_k);
            }
            Some(g) => {
                let probe_graph = PreparedGraph::new(g.clone());
                for (_, e) in stage1 {
                    let anchors = self.anchors(&e.graph_id, e.version, params.depth).expect("live entry is indexed");
                    for a in anchors.iter() {
                        let ub = similarity_upper_bound(&probe_graph, &a.prepared, cfg);
                        if ub < params.tau_sim {
                            continue;
                        }
                        if results.len() >= params.top_k && ub < results[params.top_k - 1].score {
                            continue;
                        }
                        let s = similarity_prepared(&probe_graph, &a.prepared, cfg)?;
                        if s.score >= params.tau_sim {
                            results.push(QueryResult {
                                graph_id: e.graph_id.clone(),
                                version: e.version,
                                anchor: a.node.clone(),
                                score: s.score,
                                approx: s.approximate,
                            });
                            sort_results(&mut results);
                            results.truncate(params.top_k);
                        }
                    }
                }
            }
        }
        Ok(results)
    }
}

fn sort_results(results: &mut [QueryResult]) {
    results.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.graph_id.cmp(&b.graph_id))
            .then(a.version.cmp(&b.version))
            .then_with(|| a.anchor.cmp(&b.anchor))
    });
}

/// Distinct `(graph_id, version)` pairs referenced by a result list.
pub fn result_sources(results: &[QueryResult]) -> BTreeSet<(String, u32)> {
    results.iter().map(|r| (r.graph_id.clone(), r.version)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::graph::{EdgeKind, NodeKind, ReasoningEdge, ReasoningNode};
    use crate::similarity::similarity;
    use chrono::TimeZone;

    fn embedder() -> HashingEmbedder {
        EmbeddingSpec::default().embedder().unwrap()
    }

    fn plan(labels: &[&str]) -> ReasoningGraph {
        let e = embedder();
        let mut g = ReasoningGraph::new(64);
        for (i, l) in labels.iter().enumerate() {
            g.add_node(ReasoningNode::new(format!("n{i}"), NodeKind::FeatureDef, *l, e.node_feature(NodeKind::FeatureDef, l)))
                .unwrap();
        }
        for i in 1..labels.len() {
            g.add_edge(ReasoningEdge::new(format!("n{}", i - 1), format!("n{i}"), EdgeKind::Dataflow)).unwrap();
        }
        g
    }

    fn content(id: &str, labels: &[&str]) -> EntryContent {
        EntryContent {
            graph_id: id.into(),
            graph: plan(labels),
            task_embedding: embedder().embed_text(&labels.join(" ")),
            ..EntryContent::default()
        }
    }

    fn at(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
    }

    #[test]
    fn versions_are_contiguous() {
        let s = Store::in_memory(EmbeddingSpec::default());
        assert_eq!(s.put(content("g1", &["a"])).unwrap(), ("g1".into(), 1));
        assert_eq!(s.put(content("g1", &["b"])).unwrap(), ("g1".into(), 2));
        assert_eq!(s.get("g1", Some(1)).unwrap().graph, plan(&["a"]));
        assert_eq!(s.get("g1", None).unwrap().version, 2);
        assert!(matches!(s.get("missing", None), Err(Error::Store(StoreError::NotFound(_)))));
        assert!(matches!(
            s.get("g1", Some(3)),
            Err(Error::Store(StoreError::VersionNotFound { .. }))
        ));
        assert!(matches!(
            s.get("g1", Some(0)),
            Err(Error::Store(StoreError::VersionNotFound { .. }))
        ));
    }

    #[test]
    fn put_rejects_invalid_and_mismatched() {
        let s = Store::in_memory(EmbeddingSpec::default());
        let mut c = content("g", &["a"]);
        c.task_embedding.pop();
        assert!(matches!(s.put(c), Err(Error::DimensionMismatch { .. })));
        let bad = ReasoningGraph::from_parts_unchecked(
            64,
            vec![ReasoningNode::new("a", NodeKind::Generic, "", vec![0.0; 64])],
            vec![ReasoningEdge::new("a", "zz", EdgeKind::Causal)],
        );
        let c = EntryContent {
            graph: bad,
            ..content("g", &["a"])
        };
        assert!(matches!(s.put(c), Err(Error::Store(StoreError::InvalidGraph(_)))));
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let original = content("g1", &["monthly sales", "q2 filter", "forecast"]);
        let bytes = original.graph.to_canonical_json();
        {
            let s = Store::create(dir.path(), EmbeddingSpec::default()).unwrap();
            s.put(original.clone()).unwrap();
            s.put(content("g2", &["x"])).unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        assert!(!s.open_report().index_rebuilt);
        let e = s.get("g1", Some(1)).unwrap();
        assert_eq!(e.graph.to_canonical_json(), bytes);
        assert_eq!(e.output_signature, original.graph.canonical_hash());
        assert!(matches!(
            Store::create(dir.path(), EmbeddingSpec::default()),
            Err(Error::Store(StoreError::AlreadyExists(_)))
        ));
    }

    #[test]
    fn mismatched_open_names_both_values() {
        let dir = tempfile::tempdir().unwrap();
        Store::create(dir.path(), EmbeddingSpec::default()).unwrap();
        let want = EmbeddingSpec {
            dim: 32,
            ..EmbeddingSpec::default()
        };
        let err = Store::open_expecting(dir.path(), &want).err().unwrap().to_string();
        assert!(err.contains("64") && err.contains("32"), "{err}");
    }

    #[test]
    fn index_is_rebuilt_when_damaged() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::create(dir.path(), EmbeddingSpec::default()).unwrap();
            s.put(content("g1", &["a"])).unwrap();
        }
        fs::write(dir.path().join(INDEX_FILE), b"garbage").unwrap();
        let s = Store::open(dir.path()).unwrap();
        assert!(s.open_report().index_rebuilt);
        assert_eq!(s.snapshot().len(), 1);
        drop(s);
        assert!(!Store::open(dir.path()).unwrap().open_report().index_rebuilt);
    }

    #[test]
    fn torn_tail_is_dropped_and_mid_log_damage_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::create(dir.path(), EmbeddingSpec::default()).unwrap();
            s.put(content("g1", &["a"])).unwrap();
            s.put(content("g2", &["b"])).unwrap();
        }
        let log = dir.path().join(LOG_FILE);
        let full = fs::read(&log).unwrap();
        fs::write(&log, &full[..full.len() - 7]).unwrap();
        let s = Store::open(dir.path()).unwrap();
        assert!(s.open_report().truncated_bytes > 0);
        assert_eq!(s.snapshot().len(), 1);
        // The torn bytes are gone, so new appends land on a clean boundary.
        s.put(content("g3", &["c"])).unwrap();
        drop(s);
        assert_eq!(Store::open(dir.path()).unwrap().snapshot().len(), 2);

        let mut bad = fs::read(&log).unwrap();
        bad[3] = b'x';
        fs::write(&log, bad).unwrap();
        assert!(matches!(Store::open(dir.path()), Err(Error::Store(StoreError::Corrupt(_)))));
    }

    #[test]
    fn snapshots_are_isolated() {
        let s = Store::in_memory(EmbeddingSpec::default());
        s.put(content("g1", &["a", "b"])).unwrap();
        let snap = s.snapshot();
        let probe = TaskProbe {
            embedding: embedder().embed_text("a b"),
            graph: None,
        };
        let params = QueryParams {
            top_k: 10,
            tau_sim: 0.0,
            depth: 3,
        };
        let cfg = SimilarityConfig::default();
        let before = snap.query(&probe, &params, &cfg).unwrap();
        s.put(content("g2", &["a", "b"])).unwrap();
        s.prune(&PruneConfig {
            max_entries: 1,
            strategy: PruneStrategy::OldestFirst,
        })
        .unwrap();
        assert_eq!(snap.query(&probe, &params, &cfg).unwrap(), before);
        assert_eq!(snap.len(), 1);
        assert!(!snap.get("g1", Some(1)).unwrap().tombstone);
        let again = s.snapshot();
        assert_eq!(again.query(&probe, &params, &cfg).unwrap().len(), 1);
        assert_eq!(s.snapshot().query(&probe, &params, &cfg).unwrap(), again.query(&probe, &params, &cfg).unwrap());
    }

    #[test]
    fn query_basics() {
        let s = Store::in_memory(EmbeddingSpec::default());
        let cfg = SimilarityConfig::default();
        let g = plan(&["monthly sales", "q2 filter"]);
        let probe = TaskProbe {
            embedding: embedder().embed_text("monthly sales q2 filter"),
            graph: Some(g.clone()),
        };
        let params = QueryParams {
            top_k: 3,
            tau_sim: 0.0,
            depth: 3,
        };
        assert!(s.snapshot().query(&probe, &params, &cfg).unwrap().is_empty());

        s.put(EntryContent {
            graph_id: "g".into(),
            graph: g.clone(),
            task_embedding: probe.embedding.clone(),
            ..EntryContent::default()
        })
        .unwrap();
        let r = s.snapshot().query(&probe, &params, &cfg).unwrap();
        assert_eq!(r[0].score, 1.0);
        assert_eq!(r[0].anchor, "n0");
        for w in r.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for res in &r {
            let snap = s.snapshot();
            let e = snap.get(&res.graph_id, Some(res.version)).unwrap();
            let sub = e.graph.descendant_subgraph(&res.anchor, 3).unwrap();
            assert!((similarity(&g, &sub, &cfg).unwrap() - res.score).abs() < 1e-9);
        }

        let strict = QueryParams {
            tau_sim: 1.0,
            ..params
        };
        let other = TaskProbe {
            graph: Some(plan(&["monthly sales", "q3 filter"])),
            ..probe.clone()
        };
        assert!(s.snapshot().query(&other, &strict, &cfg).unwrap().is_empty());

        let wrong = TaskProbe {
            embedding: vec![0.0; 8],
            graph: None,
        };
        assert!(matches!(s.snapshot().query(&wrong, &params, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn prune_strategies() {
        let s = Store::in_memory(EmbeddingSpec::default());
        for i in 0..3 {
            s.put_at(content(&format!("g{i}"), &["a"]), at(i)).unwrap();
        }
        let cfg = PruneConfig {
            max_entries: 5,
            strategy: PruneStrategy::OldestFirst,
        };
        assert!(s.prune(&cfg).unwrap().is_empty());
        for i in 3..5 {
            s.put_at(content(&format!("g{i}"), &["a"]), at(i)).unwrap();
        }
        let cut = s
            .prune(&PruneConfig {
                max_entries: 3,
                ..cfg
            })
            .unwrap();
        assert_eq!(cut, vec![("g0".to_string(), 1), ("g1".to_string(), 1)]);
        assert!(s.get("g0", Some(1)).unwrap().tombstone);
        assert!(s.get("g0", None).is_err());
        assert_eq!(s.snapshot().len(), 3);

        // g2 is cited by a reused node, so g3 goes first under reuse-count ordering.
        let mut citing = content("h", &["a"]);
        let origin = crate::graph::Provenance {
            graph_id: "g2".into(),
            version: 1,
            node_id: "n0".into(),
        };
        citing.graph.set_origin("n0", Some(origin)).unwrap();
        s.put_at(citing, at(10)).unwrap();
        let cut = s
            .prune(&PruneConfig {
                max_entries: 3,
                strategy: PruneStrategy::LowestReuseCountFirst,
            })
            .unwrap();
        assert_eq!(cut, vec![("g3".to_string(), 1)]);
    }

    #[test]
    fn tombstones_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::create(dir.path(), EmbeddingSpec::default()).unwrap();
            for i in 0..3 {
                s.put_at(content(&format!("g{i}"), &["a"]), at(i)).unwrap();
            }
            s.prune(&PruneConfig {
                max_entries: 2,
                strategy: PruneStrategy::OldestFirst,
            })
            .unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.snapshot().len(), 2);
        assert!(s.get("g0", Some(1)).unwrap().tombstone);
    }

    #[test]
    fn concurrent_puts_do_not_disturb_snapshots() {
        let s = Arc::new(Store::in_memory(EmbeddingSpec::default()));
        for i in 0..4 {
            s.put(content(&format!("seed{i}"), &["a", "b"])).unwrap();
        }
        let cfg = SimilarityConfig::default();
        let params = QueryParams {
            top_k: 50,
            tau_sim: 0.0,
            depth: 2,
        };
        let probe = TaskProbe {
            embedding: embedder().embed_text("a b"),
            graph: Some(plan(&["a", "b"])),
        };
        let writer = {
            let s = Arc::clone(&s);
            std::thread::spawn(move || {
                for i in 0..40 {
                    s.put(content(&format!("w{i}"), &["a", "b"])).unwrap();
                }
            })
        };
        let mut checks = 0;
        while checks < 20 {
            let snap = s.snapshot();
            let captured: BTreeSet<(String, u32)> =
                snap.live_entries().map(|e| (e.graph_id.clone(), e.version)).collect();
            let r = snap.query(&probe, &params, &cfg).unwrap();
            assert!(result_sources(&r).is_subset(&captured));
            assert_eq!(snap.query(&probe, &params, &cfg).unwrap(), r);
            checks += 1;
        }
        writer.join().unwrap();
        assert_eq!(s.snapshot().len(), 44);
    }
}
