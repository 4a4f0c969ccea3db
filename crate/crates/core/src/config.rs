//! Run configuration shared by every stage.
//!
//! Every field has a default; a configuration file (TOML in the CLI) only
//! needs the sections it changes. Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{GenerationParams, Limits, RetryPolicy, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::corpus::CaptionMode;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub backend: BackendConfig,
    pub caption_mode: CaptionMode,
    pub review: ReviewConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: SeedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory for review state and other stage bookkeeping.
    pub state_dir: PathBuf,
    /// Response cache; defaults to `<state_dir>/cache.jsonl`.
    pub cache: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            state_dir: PathBuf::from("ciem_state"),
            cache: None,
        }
    }
}

impl PathsConfig {
    pub fn cache_path(&self) -> PathBuf {
        self.cache
            .clone()
            .unwrap_or_else(|| self.state_dir.join("cache.jsonl"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub model_name: Option<String>,
    pub endpoint: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_concurrency: usize,
    pub requests_per_minute: Option<f64>,
    /// Retry budget after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        BackendConfig {
            model_name: None,
            endpoint: None,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_concurrency: 4,
            requests_per_minute: None,
            max_retries: retry.max_retries,
            base_delay_ms: retry.base_delay.as_millis() as u64,
            max_delay_ms: retry.max_delay.as_millis() as u64,
            timeout_secs: 60,
        }
    }
}

impl BackendConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
        }
    }

    pub fn limits(&self) -> Limits {
        Limits::new(self.max_concurrency, self.requests_per_minute)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    /// Parameters for `backend_id` with this section's sampling settings.
    pub fn params(&self, backend_id: &str, seed: u64) -> GenerationParams {
        let mut p = match backend_id {
            "stub" => GenerationParams::stub(seed),
            _ => GenerationParams::http(self.model_name.clone().unwrap_or_else(|| "gpt-3.5-turbo".into())),
        };
        p.backend_id = backend_id.to_string();
        if let Some(m) = &self.model_name {
            p.model_name = m.clone();
        }
        p.temperature = self.temperature;
        p.max_tokens = self.max_tokens;
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub moderators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub model_name: String,
    pub max_concurrency: usize,
    pub requests_per_minute: Option<f64>,
    /// Percent of items allowed to fail in transport.
    pub max_failure_pct: f64,
    pub timeout_secs: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            model_name: "vlm".into(),
            max_concurrency: 4,
            requests_per_minute: None,
            max_failure_pct: 10.0,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub generation: u64,
    pub export: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    /// Checks internal consistency; `outputs` are the paths a stage is
    /// about to read or write, which must all differ from each other and
    /// from the configured state paths.
    pub fn validate(&self, outputs: &[(&str, &std::path::Path)]) -> Result<(), ConfigError> {
        if self.backend.max_concurrency < 1 {
            return Err(ConfigError("backend.max_concurrency must be at least 1".into()));
        }
        if self.evaluation.max_concurrency < 1 {
            return Err(ConfigError("evaluation.max_concurrency must be at least 1".into()));
        }
        for (name, rpm) in [
            ("backend", self.backend.requests_per_minute),
            ("evaluation", self.evaluation.requests_per_minute),
        ] {
            if rpm.is_some_and(|r| !r.is_finite() || r <= 0.0) {
                return Err(ConfigError(format!("{name}.requests_per_minute must be positive")));
            }
        }
        if !(0.0..=100.0).contains(&self.evaluation.max_failure_pct) {
            return Err(ConfigError("evaluation.max_failure_pct must lie in [0, 100]".into()));
        }
        if self.backend.base_delay_ms > self.backend.max_delay_ms {
            return Err(ConfigError("backend.base_delay_ms exceeds backend.max_delay_ms".into()));
        }
        self.backend
            .params("stub", 0)
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;

        let cache = self.paths.cache_path();
        let mut seen: BTreeMap<PathBuf, &str> = BTreeMap::new();
        seen.insert(normalize(&cache), "cache");
        for (name, path) in outputs {
            if let Some(prev) = seen.insert(normalize(path), name) {
                return Err(ConfigError(format!(
                    "paths `{prev}` and `{name}` both point at {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

fn normalize(path: &std::path::Path) -> PathBuf {
    use std::path::Component;
    let abs = if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(path)
    };
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}
