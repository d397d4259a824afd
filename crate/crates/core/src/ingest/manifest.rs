use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("text file {0} listed in manifest does not exist")]
    MissingFile(PathBuf),
}

/// One manifest record. `text_file` is resolved relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: String,
    pub text_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract_id: Option<String>,
}

/// Reads a manifest: JSON lines (one object per document) or a JSON array.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ManifestError::Read {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut entries: Vec<ManifestEntry> = if raw.trim_start().starts_with('[') {
        serde_json::from_str(&raw).map_err(|e| ManifestError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        raw.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ManifestError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?
    };

    for entry in &mut entries {
        if entry.text_file.is_relative() {
            entry.text_file = base.join(&entry.text_file);
        }
        if !entry.text_file.is_file() {
            return Err(ManifestError::MissingFile(entry.text_file.clone()));
        }
    }
    Ok(entries)
}
