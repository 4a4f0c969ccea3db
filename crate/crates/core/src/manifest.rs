//! Reproduction manifests written next to every stage output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::{self, IoError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Stage that produced the artifact, e.g. `generate`.
    pub artifact: String,
    pub template_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Content digests of every input the artifact was derived from.
    pub source_digest: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(artifact: impl Into<String>) -> Self {
        Manifest {
            artifact: artifact.into(),
            template_version: crate::TEMPLATE_VERSION.to_string(),
            ..Default::default()
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn source(mut self, name: &str, digest: impl Into<String>) -> Self {
        self.source_digest.insert(name.to_string(), digest.into());
        self
    }

    pub fn count(mut self, name: &str, value: u64) -> Self {
        self.counts.insert(name.to_string(), value);
        self
    }

    pub fn setting(mut self, name: &str, value: impl Into<String>) -> Self {
        self.settings.insert(name.to_string(), value.into());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        io::write_json_atomic(path, self)
    }

    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf, IoError> {
        let path = sidecar_path(artifact);
        self.write(&path)?;
        Ok(path)
    }
}

/// `out/qa.jsonl` → `out/qa.jsonl.manifest.json`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_sits_next_to_artifact() {
        assert_eq!(
            sidecar_path(Path::new("out/qa.jsonl")),
            PathBuf::from("out/qa.jsonl.manifest.json")
        );
    }
}
