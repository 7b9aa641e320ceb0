use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CacheKey, EndpointKind, Response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub kind: EndpointKind,
    pub model: String,
    pub request: serde_json::Value,
    pub response: Response,
    pub recorded_at: DateTime<Utc>,
    pub latency_secs: f64,
}

/// `<root>/<model>/<digest>.json`, one file per request.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

fn model_dir(model: &str) -> String {
    model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

impl ResponseCache {
    pub fn new(root: PathBuf) -> Self {
        ResponseCache { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, model: &str, key: &CacheKey) -> PathBuf {
        self.root.join(model_dir(model)).join(format!("{}.json", key.0))
    }

    pub fn get(&self, model: &str, key: &CacheKey) -> std::io::Result<Option<CacheEntry>> {
        let path = self.path_for(model, key);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let path = self.path_for(&entry.model, &entry.key);
        let bytes = serde_json::to_vec_pretty(entry).map_err(std::io::Error::other)?;
        crate::corpus::write_atomic(&path, &bytes)
    }

    /// Number of stored entries, across all models.
    pub fn len(&self) -> usize {
        let Ok(models) = std::fs::read_dir(&self.root) else {
            return 0;
        };
        models
            .flatten()
            .filter_map(|d| std::fs::read_dir(d.path()).ok())
            .map(|files| files.flatten().filter(|f| f.path().extension().is_some_and(|e| e == "json")).count())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
