#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use contract_qa_core::cms::seed::{read_csv, seed};
use contract_qa_core::cms::CmsStore;
use contract_qa_core::index::{EmbeddingProvider, HashedBagOfWords, IndexMeta, Metric, VectorIndex};
use contract_qa_core::ingest::{ingest_entries, load_manifest, HeadingRules};
use contract_qa_core::llm::{ChatProvider, FixtureAnalyst};
use contract_qa_core::orchestrator::{Engine, EngineConfig, EngineParts};

pub const DIMENSION: usize = 512;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Seeded database and ingested index over the committed fixtures.
pub struct World {
    pub dir: tempfile::TempDir,
    pub db_path: PathBuf,
    pub db: Arc<CmsStore>,
    pub index: Arc<VectorIndex>,
    pub embedder: Arc<HashedBagOfWords>,
}

pub fn seed_db(dir: &Path) -> PathBuf {
    let f = fixtures_dir();
    let path = dir.join("cms.db");
    seed(
        &path,
        &read_csv(&f.join("contracts.csv")).unwrap(),
        &read_csv(&f.join("managers.csv")).unwrap(),
        &read_csv(&f.join("amendments.csv")).unwrap(),
    )
    .unwrap();
    path
}

pub fn empty_index(e: &HashedBagOfWords) -> VectorIndex {
    VectorIndex::in_memory(IndexMeta::new(e.dimension(), Metric::Cosine, e.name()))
}

pub async fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let db_path = seed_db(dir.path());
    let db = Arc::new(CmsStore::open(&db_path).unwrap());
    let embedder = Arc::new(HashedBagOfWords::new(DIMENSION));
    let index = Arc::new(empty_index(&embedder));
    let entries = load_manifest(&fixtures_dir().join("manifest.jsonl")).unwrap();
    ingest_entries(&entries, &HeadingRules::default(), embedder.as_ref(), &index, Some(&db))
        .await
        .unwrap();
    World {
        dir,
        db_path,
        db,
        index,
        embedder,
    }
}

impl World {
    pub fn engine(&self, config: EngineConfig) -> Engine {
        self.engine_with(config, Arc::new(FixtureAnalyst::new()))
    }

    pub fn engine_with(&self, config: EngineConfig, llm: Arc<dyn ChatProvider>) -> Engine {
        Engine::new(EngineParts {
            index: self.index.clone(),
            db: Some(self.db.clone()),
            llm,
            embedder: self.embedder.clone(),
            config,
            audit: None,
        })
        .unwrap()
    }
}
