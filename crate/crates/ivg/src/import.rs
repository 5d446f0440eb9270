//! Session import from a JSON-lines records file.
//!
//! ```text
//! {"prompt": "a cat", "seed": 7, "images": ["out/0001.png"], "timestamp": "2024-03-01T10:00:00Z"}
//! ```
//!
//! Image paths are relative to the records file. `image` is accepted for a
//! single path. Records are imported in file order.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;

use crate::store::{png_dimensions, NewStep, Snapshot, Store, StoreError};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("no records found")]
    Empty,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    prompt: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    images: Vec<PathBuf>,
    #[serde(default)]
    image: Option<PathBuf>,
    #[serde(default)]
    timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    model: Option<String>,
}

/// Parses and loads every record, failing on the first problem before
/// anything is written.
pub fn read_records(path: &Path) -> Result<Vec<NewStep>, ImportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ImportError::Read {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut steps = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| ImportError::Record { line: line_no, reason };
        let record: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let mut paths = record.images;
        paths.extend(record.image);
        if paths.is_empty() {
            return Err(bad("record has no images".into()));
        }
        let mut images = Vec::with_capacity(paths.len());
        for p in &paths {
            let full = base.join(p);
            let bytes = std::fs::read(&full).map_err(|e| bad(format!("{}: {e}", full.display())))?;
            png_dimensions(&bytes).map_err(|e| bad(format!("{}: not a PNG: {e}", full.display())))?;
            images.push(bytes);
        }
        steps.push(NewStep {
            prompt: record.prompt,
            seed: record.seed,
            model: record.model.unwrap_or_else(|| "import".into()),
            images,
            created_at: record.timestamp,
        });
    }
    if steps.is_empty() {
        return Err(ImportError::Empty);
    }
    Ok(steps)
}

/// Imports `path` as a new session. On any error no session is created.
pub fn import_file(store: &Store, path: &Path, title: Option<&str>) -> Result<std::sync::Arc<Snapshot>, ImportError> {
    let steps = read_records(path)?;
    let default_title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(store.import_session(title.unwrap_or(&default_title), &steps)?)
}
