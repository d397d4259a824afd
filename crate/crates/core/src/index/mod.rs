//! Metadata-filtered exact similarity search over embedded chunks.

pub mod embed;
mod store;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{embed, EmbedError, EmbeddingProvider, EmbeddingVector, HashedBagOfWords, RemoteEmbeddings};
pub use store::{IndexMeta, Store, ENTRIES_FILE, META_FILE};

use crate::ingest::Chunk;

pub const DEFAULT_K: usize = 4;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index built with provider {index:?}, engine configured with {configured:?}")]
    ProviderMismatch { index: String, configured: String },
    #[error("index storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt index: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
    Manhattan,
}

impl Metric {
    /// Similarity score, higher is closer. Cosine lies in [-1, 1]; the
    /// distance metrics map to (0, 1] via `1 / (1 + d)`.
    pub fn score(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (f64::from(x), f64::from(y));
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
                }
            }
            Metric::Euclidean => {
                let d: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                1.0 / (1.0 + d)
            }
            Metric::Manhattan => {
                let d: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
                    .sum();
                1.0 / (1.0 + d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk: Chunk,
    pub vector: EmbeddingVector,
}

/// Restricts the candidate set before similarity is computed. Empty filter
/// matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Case-insensitive substring of the clause title.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clause: Option<String>,
}

impl MetadataFilter {
    pub fn contract(id: impl Into<String>) -> Self {
        Self {
            contract: Some(id.into()),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.contract.is_none() && self.source.is_none() && self.clause.is_none()
    }

    pub fn matches(&self, chunk: &Chunk) -> bool {
        let meta = &chunk.metadata;
        self.contract.as_ref().is_none_or(|c| &meta.contract == c)
            && self.source.as_ref().is_none_or(|s| &meta.source == s)
            && self
                .clause
                .as_ref()
                .is_none_or(|c| meta.clause.to_lowercase().contains(&c.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk: Chunk,
    pub score: f64,
    /// Pulled in as a neighbor of a top-k hit rather than ranked itself.
    #[serde(default)]
    pub expanded: bool,
}

/// Ranking order: score descending, then chunk id ascending.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsertReport {
    pub inserted: usize,
    pub replaced: usize,
}

struct State {
    entries: BTreeMap<String, IndexEntry>,
    store: Option<Store>,
}

/// Exact linear-scan vector index. Readers share access; upserts are
/// exclusive, and are on disk before they become visible.
pub struct VectorIndex {
    meta: IndexMeta,
    state: RwLock<State>,
    queries: AtomicU64,
}

impl VectorIndex {
    pub fn in_memory(meta: IndexMeta) -> Self {
        Self::with_state(meta, BTreeMap::new(), None)
    }

    /// Opens the index in `dir`, creating it with `meta` if absent. An
    /// existing index must agree with `meta` on dimension and provider.
    pub fn open_or_create(dir: &Path, meta: IndexMeta) -> Result<Self, IndexError> {
        if dir.join(META_FILE).exists() {
            let index = Self::open(dir)?;
            if index.meta.dimension != meta.dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: index.meta.dimension,
                    got: meta.dimension,
                });
            }
            if index.meta.provider != meta.provider {
                return Err(IndexError::ProviderMismatch {
                    index: index.meta.provider.clone(),
                    configured: meta.provider,
                });
            }
            Ok(index)
        } else {
            let store = Store::create(dir, &meta)?;
            Ok(Self::with_state(meta, BTreeMap::new(), Some(store)))
        }
    }

    pub fn open(dir: &Path) -> Result<Self, IndexError> {
        let (store, meta, entries) = Store::open(dir)?;
        Ok(Self::with_state(meta, entries, Some(store)))
    }

    fn with_state(meta: IndexMeta, entries: BTreeMap<String, IndexEntry>, store: Option<Store>) -> Self {
        Self {
            meta,
            state: RwLock::new(State { entries, store }),
            queries: AtomicU64::new(0),
        }
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.state.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<IndexEntry> {
        self.state.read().entries.get(id).cloned()
    }

    /// Number of `query` calls served so far.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn upsert(&self, entries: Vec<IndexEntry>) -> Result<UpsertReport, IndexError> {
        for e in &entries {
            if e.vector.dimension() != self.meta.dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: self.meta.dimension,
                    got: e.vector.dimension(),
                });
            }
        }
        let mut state = self.state.write();
        if let Some(store) = state.store.as_mut() {
            store.append(&entries)?;
        }
        let mut report = UpsertReport::default();
        for e in entries {
            match state.entries.insert(e.chunk.id.clone(), e) {
                Some(_) => report.replaced += 1,
                None => report.inserted += 1,
            }
        }
        let live = state.entries.len();
        if let Some(store) = state.store.as_mut() {
            if store.should_compact(live) {
                let State { entries, store } = &mut *state;
                store.as_mut().expect("checked above").compact(entries.values())?;
            }
        }
        Ok(report)
    }

    /// Rewrites the backing file with one record per live entry.
    pub fn compact(&self) -> Result<(), IndexError> {
        let mut state = self.state.write();
        let State { entries, store } = &mut *state;
        if let Some(store) = store.as_mut() {
            store.compact(entries.values())?;
        }
        Ok(())
    }

    pub fn query(
        &self,
        vector: &EmbeddingVector,
        filter: &MetadataFilter,
        k: usize,
        expand_neighbors: bool,
    ) -> Result<Vec<RetrievalResult>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if vector.dimension() != self.meta.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.meta.dimension,
                got: vector.dimension(),
            });
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        let metric = self.meta.metric;
        let q = vector.values();

        let state = self.state.read();
        let mut scored: Vec<(&IndexEntry, f64)> = state
            .entries
            .values()
            .filter(|e| filter.matches(&e.chunk))
            .map(|e| (e, metric.score(q, e.vector.values())))
            .collect();
        scored.sort_by(|a, b| rank_order((&a.0.chunk.id, a.1), (&b.0.chunk.id, b.1)));
        scored.truncate(k);

        let mut seen: HashSet<&str> = scored.iter().map(|(e, _)| e.chunk.id.as_str()).collect();
        let mut out: Vec<RetrievalResult> = scored
            .iter()
            .map(|(e, s)| RetrievalResult {
                chunk: e.chunk.clone(),
                score: *s,
                expanded: false,
            })
            .collect();

        if expand_neighbors {
            for (hit, _) in &scored {
                let meta = &hit.chunk.metadata;
                for id in [&meta.neighbor_prev, &meta.neighbor_next].into_iter().flatten() {
                    let Some(neighbor) = state.entries.get(id) else {
                        continue;
                    };
                    if !filter.matches(&neighbor.chunk) || !seen.insert(neighbor.chunk.id.as_str()) {
                        continue;
                    }
                    out.push(RetrievalResult {
                        chunk: neighbor.chunk.clone(),
                        score: metric.score(q, neighbor.vector.values()),
                        expanded: true,
                    });
                }
            }
        }
        Ok(out)
    }
}
