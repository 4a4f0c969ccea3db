#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::de::DeserializeOwned;

pub const BIN: &str = env!("CARGO_BIN_EXE_ciem");

pub struct Run {
    pub code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    /// Fails unless the command exited 0.
    pub fn ok(self) -> Result<Run, String> {
        if self.code == Some(0) {
            Ok(self)
        } else {
            Err(format!("ciem exited {:?}: {}", self.code, self.stderr.trim()))
        }
    }
}

/// Runs the binary in `dir` with a clean environment for config and logging.
pub fn ciem(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("CIEM_CONFIG")
        .env_remove("CIEM_API_KEY")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn ciem");
    Run {
        code: out.status.code(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .canonicalize()
        .expect("fixture exists")
        .to_string_lossy()
        .into_owned()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{}: {e}: {l}", path.display())))
        .collect()
}
