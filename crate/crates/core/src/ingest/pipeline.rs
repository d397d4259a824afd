//! Manifest to index: read, parse, chunk, embed, upsert.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{chunk_document, parse_document, HeadingRules, IngestError, ManifestEntry, ManifestError};
use crate::cms::{CmsError, CmsStore};
use crate::index::{EmbedError, EmbeddingProvider, IndexEntry, IndexError, VectorIndex};

const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Database(#[from] CmsError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub chunks: usize,
    pub inserted: usize,
    pub replaced: usize,
    /// Sources whose contract id could not be determined.
    pub unidentified: Vec<String>,
}

/// Ingests every manifest entry. The contract id of a document is, in order:
/// the manifest's `contract_id`, the id found in its text, the id the
/// database registers for its source file.
pub async fn ingest_entries(
    entries: &[ManifestEntry],
    rules: &HeadingRules,
    embedder: &dyn EmbeddingProvider,
    index: &VectorIndex,
    db: Option<&CmsStore>,
) -> Result<IngestReport, PipelineError> {
    let meta = index.meta();
    if meta.provider != embedder.name() {
        return Err(IndexError::ProviderMismatch {
            index: meta.provider.clone(),
            configured: embedder.name().to_owned(),
        }
        .into());
    }

    let mut report = IngestReport::default();
    let mut chunks = Vec::new();
    for entry in entries {
        let raw = std::fs::read_to_string(&entry.text_file).map_err(|source| PipelineError::Read {
            path: entry.text_file.clone(),
            source,
        })?;
        let mut doc = parse_document(&raw, &entry.source, rules)?;
        if let Some(id) = &entry.contract_id {
            doc = doc.with_contract_id(id)?;
        } else if doc.contract_id.is_none() {
            if let Some(db) = db {
                if let Some(id) = db.contract_for_source(&entry.source)? {
                    doc = doc.with_contract_id(&id)?;
                }
            }
        }
        if doc.contract_id.is_none() {
            report.unidentified.push(entry.source.clone());
        }
        report.documents += 1;
        chunks.extend(chunk_document(&doc));
    }
    report.chunks = chunks.len();

    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_batch(&texts).await?;
        let entries = batch
            .iter()
            .cloned()
            .zip(vectors)
            .map(|(chunk, vector)| IndexEntry { chunk, vector })
            .collect();
        let upserted = index.upsert(entries)?;
        report.inserted += upserted.inserted;
        report.replaced += upserted.replaced;
    }
    tracing::info!(documents = report.documents, chunks = report.chunks, "ingest finished");
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{HashedBagOfWords, IndexMeta, Metric};

    fn index_for(e: &HashedBagOfWords) -> VectorIndex {
        VectorIndex::in_memory(IndexMeta::new(e.dimension(), Metric::Cosine, e.name()))
    }

    #[tokio::test]
    async fn ingests_and_reingests_idempotently() {
        let dir = tempfile::tempdir().unwrap();
        let text =
            "CONTRATO OCS 12/2020\n\nCLÁUSULA PRIMEIRA - OBJETO\nSuporte.\n\nCLÁUSULA SEGUNDA - PRAZO\nDoze meses.\n";
        std::fs::write(dir.path().join("a.txt"), text).unwrap();
        std::fs::write(dir.path().join("b.txt"), "CLÁUSULA PRIMEIRA - OBJETO\nLicenças.\n").unwrap();
        let entries = vec![
            ManifestEntry {
                source: "a.pdf".into(),
                text_file: dir.path().join("a.txt"),
                contract_id: None,
            },
            ManifestEntry {
                source: "b.pdf".into(),
                text_file: dir.path().join("b.txt"),
                contract_id: None,
            },
        ];
        let e = HashedBagOfWords::new(64);
        let index = index_for(&e);
        let rules = HeadingRules::default();
        let report = ingest_entries(&entries, &rules, &e, &index, None).await.unwrap();
        assert_eq!(report.documents, 2);
        assert_eq!(report.chunks, 4);
        assert_eq!(report.inserted, 4);
        assert_eq!(report.unidentified, ["b.pdf"]);
        assert_eq!(index.get("a.pdf#000").unwrap().chunk.metadata.contract, "12/2020");

        let again = ingest_entries(&entries, &rules, &e, &index, None).await.unwrap();
        assert_eq!((again.inserted, again.replaced), (0, 4));
        assert_eq!(index.len(), 4);
    }

    #[tokio::test]
    async fn provider_mismatch_rejected() {
        let index = VectorIndex::in_memory(IndexMeta::new(64, Metric::Cosine, "other"));
        let err = ingest_entries(&[], &HeadingRules::default(), &HashedBagOfWords::new(64), &index, None)
            .await
            .unwrap_err();
        assert!(matches!(err, PipelineError::Index(IndexError::ProviderMismatch { .. })));
    }
}
