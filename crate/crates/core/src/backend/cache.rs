//! Append-only JSONL response cache.
//!
//! Each line of `cache.jsonl` is one [`CacheEntry`]. On open, a trailing
//! line without a newline (a write interrupted by a crash) is cut off, so a
//! restarted run continues from the last complete entry.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::GenerationParams;
use crate::io::IoError;
use crate::promptgen::PromptRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedRequest {
    pub prompt: PromptRequest,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub cache_key: String,
    pub request: CachedRequest,
    pub response_text: String,
    pub timestamp: DateTime<Utc>,
    pub backend_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}:{line}: corrupt cache entry: {source}")]
    Corrupt {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    index: RwLock<HashMap<String, Arc<str>>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    /// Cache that lives only for the process.
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let mut index = HashMap::new();
        if path.exists() {
            let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
            let complete = match bytes.iter().rposition(|&b| b == b'\n') {
                Some(i) => i + 1,
                None => 0,
            };
            if complete < bytes.len() {
                warn!(
                    path = %path.display(),
                    bytes = bytes.len() - complete,
                    "dropping incomplete trailing cache entry"
                );
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(|e| IoError::io(path, e))?;
                f.set_len(complete as u64).map_err(|e| IoError::io(path, e))?;
                f.sync_all().map_err(|e| IoError::io(path, e))?;
            }
            let text = String::from_utf8_lossy(&bytes[..complete]);
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(line).map_err(|source| CacheError::Corrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    source,
                })?;
                index.insert(entry.cache_key, Arc::from(entry.response_text));
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| IoError::io(path, e))?;
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            index: RwLock::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<Arc<str>> {
        self.index.read().expect("cache index poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists `entry` (flushed and synced) before making it visible.
    /// A key that is already present is left untouched.
    pub fn insert(&self, entry: &CacheEntry) -> Result<(), CacheError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if self.get(&entry.cache_key).is_some() {
            return Ok(());
        }
        if let (Some(file), Some(path)) = (writer.as_mut(), self.path.as_deref()) {
            let mut line = serde_json::to_vec(entry).expect("cache entry serializes");
            line.push(b'\n');
            file.write_all(&line).map_err(|e| IoError::io(path, e))?;
            file.sync_data().map_err(|e| IoError::io(path, e))?;
        }
        self.index
            .write()
            .expect("cache index poisoned")
            .insert(entry.cache_key.clone(), Arc::from(entry.response_text.as_str()));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptgen::build_factual_prompt;

    fn entry(key: &str, text: &str) -> CacheEntry {
        CacheEntry {
            cache_key: key.into(),
            request: CachedRequest {
                prompt: build_factual_prompt("A cat.").unwrap(),
                params: GenerationParams::stub(0),
            },
            response_text: text.into(),
            timestamp: Utc::now(),
            backend_id: "stub".into(),
        }
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.insert(&entry("a", "one")).unwrap();
            cache.insert(&entry("b", "two")).unwrap();
            cache.insert(&entry("a", "ignored")).unwrap();
        }
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("a").as_deref(), Some("one"));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.insert(&entry("a", "one")).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"cache_key\":\"b\",\"requ").unwrap();
        drop(f);
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        cache.insert(&entry("c", "three")).unwrap();
        drop(cache);
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        assert!(reopened.get("c").is_some());
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(ResponseCache::open(&path), Err(CacheError::Corrupt { line: 1, .. })));
    }
}
