//! JSON / JSONL file helpers shared by every stage.
//!
//! Whole-file outputs are written to a temporary sibling and renamed into
//! place, so a reader never observes a half-written file.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

impl IoError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Reads every non-blank line of `path` as one JSON record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            line: idx + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Serializes records as JSONL into a byte buffer (one record per line).
pub fn to_jsonl_bytes<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record).expect("records serialize to JSON");
        buf.push(b'\n');
    }
    buf
}

pub fn write_jsonl_atomic<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    write_bytes_atomic(path, &to_jsonl_bytes(records))
}

/// Writes pretty-printed JSON with a trailing newline.
pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut buf = serde_json::to_vec_pretty(value).expect("value serializes to JSON");
    buf.push(b'\n');
    write_bytes_atomic(path, &buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        line: 0,
        source,
    })
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
