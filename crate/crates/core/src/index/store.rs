//! On-disk layout of an index directory.
//!
//! `index.meta` holds JSON metadata. `entries.bin` is a sequence of records,
//! each `u32 LE json_len | chunk JSON | u32 LE dim | dim x f32 LE`. Upserts
//! append; on load later records for an id shadow earlier ones. A torn
//! trailing record (crash mid-append) is cut off on open.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, IndexEntry, IndexError, Metric};
use crate::ingest::Chunk;

pub const META_FILE: &str = "index.meta";
pub const ENTRIES_FILE: &str = "entries.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub dimension: usize,
    pub metric: Metric,
    pub provider: String,
    #[serde(default = "format_version")]
    pub format: u32,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

impl IndexMeta {
    pub fn new(dimension: usize, metric: Metric, provider: impl Into<String>) -> Self {
        Self {
            dimension,
            metric,
            provider: provider.into(),
            format: FORMAT_VERSION,
        }
    }
}

pub struct Store {
    dir: PathBuf,
    file: File,
    records: usize,
}

impl Store {
    pub(super) fn create(dir: &Path, meta: &IndexMeta) -> Result<Self, IndexError> {
        fs::create_dir_all(dir)?;
        write_atomic(
            &dir.join(META_FILE),
            &serde_json::to_vec_pretty(meta).expect("meta serializes"),
        )?;
        let file = OpenOptions::new()
            .create(true)
            .truncate(true)
            .write(true)
            .open(dir.join(ENTRIES_FILE))?;
        file.sync_all()?;
        sync_dir(dir)?;
        Ok(Self {
            dir: dir.to_owned(),
            file,
            records: 0,
        })
    }

    pub(super) fn open(dir: &Path) -> Result<(Self, IndexMeta, BTreeMap<String, IndexEntry>), IndexError> {
        let meta: IndexMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)
            .map_err(|e| IndexError::Corrupt(format!("{META_FILE}: {e}")))?;
        if meta.format != FORMAT_VERSION {
            return Err(IndexError::Corrupt(format!(
                "unsupported format version {}",
                meta.format
            )));
        }
        let path = dir.join(ENTRIES_FILE);
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(&path)?.read_to_end(&mut bytes)?;
        }

        let mut entries = BTreeMap::new();
        let mut records = 0;
        let mut pos = 0;
        while pos < bytes.len() {
            match decode_record(&bytes[pos..])? {
                Some((entry, used)) => {
                    if entry.vector.dimension() != meta.dimension {
                        return Err(IndexError::Corrupt(format!(
                            "record at offset {pos} has dimension {}",
                            entry.vector.dimension()
                        )));
                    }
                    entries.insert(entry.chunk.id.clone(), entry);
                    records += 1;
                    pos += used;
                }
                None => {
                    tracing::warn!(offset = pos, "discarding torn trailing index record");
                    break;
                }
            }
        }

        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if pos < bytes.len() {
            file.set_len(pos as u64)?;
            file.sync_all()?;
        }
        let mut store = Self {
            dir: dir.to_owned(),
            file,
            records,
        };
        if store.should_compact(entries.len()) {
            store.compact(entries.values())?;
        }
        Ok((store, meta, entries))
    }

    pub(super) fn append(&mut self, entries: &[IndexEntry]) -> Result<(), IndexError> {
        let mut buf = Vec::new();
        for e in entries {
            encode_record(e, &mut buf);
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        self.records += entries.len();
        Ok(())
    }

    pub(super) fn should_compact(&self, live: usize) -> bool {
        self.records > 64 && self.records > live * 2
    }

    pub(super) fn compact<'a>(&mut self, live: impl Iterator<Item = &'a IndexEntry>) -> Result<(), IndexError> {
        let tmp = self.dir.join(format!("{ENTRIES_FILE}.tmp"));
        let mut records = 0;
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            let mut buf = Vec::new();
            for e in live {
                buf.clear();
                encode_record(e, &mut buf);
                w.write_all(&buf)?;
                records += 1;
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        let path = self.dir.join(ENTRIES_FILE);
        fs::rename(&tmp, &path)?;
        sync_dir(&self.dir)?;
        self.file = OpenOptions::new().append(true).open(&path)?;
        self.records = records;
        Ok(())
    }
}

fn encode_record(e: &IndexEntry, buf: &mut Vec<u8>) {
    let json = serde_json::to_vec(&e.chunk).expect("chunk serializes");
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let values = e.vector.values();
    buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// `Ok(None)` means the buffer ends mid-record.
fn decode_record(bytes: &[u8]) -> Result<Option<(IndexEntry, usize)>, IndexError> {
    let read_u32 = |at: usize| -> Option<usize> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    };
    let Some(json_len) = read_u32(0) else {
        return Ok(None);
    };
    let Some(json) = bytes.get(4..4 + json_len) else {
        return Ok(None);
    };
    let Some(dim) = read_u32(4 + json_len) else {
        return Ok(None);
    };
    let start = 8 + json_len;
    let Some(raw) = bytes.get(start..start + dim * 4) else {
        return Ok(None);
    };
    let chunk: Chunk = serde_json::from_slice(json).map_err(|e| IndexError::Corrupt(format!("chunk record: {e}")))?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let vector = EmbeddingVector::new(values).map_err(|e| IndexError::Corrupt(e.to_string()))?;
    Ok(Some((IndexEntry { chunk, vector }, start + dim * 4)))
}

fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn sync_dir(dir: &Path) -> std::io::Result<()> {
    #[cfg(unix)]
    File::open(dir)?.sync_all()?;
    #[cfg(not(unix))]
    let _ = dir;
    Ok(())
}
