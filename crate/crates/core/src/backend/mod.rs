//! Text-generation backends.
//!
//! [`Generator`] is the entry point: it answers from the response cache when
//! it can and otherwise calls the configured [`TextBackend`] under the shared
//! concurrency bound and rate limit, then persists the reply.

mod cache;
mod http;
pub mod limit;
mod stub;

pub use cache::{CacheEntry, CacheError, CachedRequest, ResponseCache};
pub use http::{first_choice_text, HttpBackend, API_KEY_ENV};
pub use limit::{Limits, RateLimiter, RetryPolicy};
pub use stub::{stub_generate, Lexicon, StubBackend};

pub(crate) use http::{classify_send_error, classify_status};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io::sha256_hex;
use crate::promptgen::PromptRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub backend_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

impl GenerationParams {
    pub fn stub(seed: u64) -> Self {
        GenerationParams {
            backend_id: "stub".into(),
            model_name: "stub-lexicon".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed,
        }
    }

    pub fn http(model_name: impl Into<String>) -> Self {
        GenerationParams {
            backend_id: "http".into(),
            model_name: model_name.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !matches!(self.backend_id.as_str(), "http" | "stub") {
            return Err(BackendError::Config(format!("unknown backend `{}`", self.backend_id)));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens < 16 {
            return Err(BackendError::Config(format!("max_tokens {} below 16", self.max_tokens)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("retries exhausted after {attempts} attempt(s): {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("{0}")]
    MalformedResponse(String),
    #[error("request rejected: {0}")]
    Request(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

impl BackendError {
    /// Whether the failure came from the remote service giving up on us.
    pub fn is_transport_exhaustion(&self) -> bool {
        matches!(self, BackendError::RetriesExhausted { .. })
    }
}

#[async_trait]
pub trait TextBackend: Send + Sync {
    /// `"http"` or `"stub"`.
    fn id(&self) -> &str;

    /// Produces a reply without consulting any cache.
    async fn generate(&self, request: &PromptRequest, params: &GenerationParams) -> Result<String, BackendError>;
}

/// SHA-256 over the canonical JSON (sorted keys, no whitespace) of every
/// request and parameter field.
pub fn cache_key(request: &PromptRequest, params: &GenerationParams) -> String {
    let mut fields: BTreeMap<&str, Value> = BTreeMap::new();
    fields.insert("backend_id", Value::from(params.backend_id.as_str()));
    fields.insert("caption", Value::from(request.caption.as_str()));
    fields.insert("kind", Value::from(request.kind.as_str()));
    fields.insert("max_tokens", Value::from(params.max_tokens));
    fields.insert("model_name", Value::from(params.model_name.as_str()));
    fields.insert("rendered", Value::from(request.rendered.as_str()));
    fields.insert("seed", Value::from(params.seed));
    fields.insert("temperature", Value::from(params.temperature));
    fields.insert("template_version", Value::from(request.template_version.as_str()));
    let canonical = serde_json::to_string(&fields).expect("cache key fields serialize");
    sha256_hex(canonical.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub cache_key: String,
    pub cached: bool,
}

/// Cached, bounded access to one backend.
pub struct Generator {
    backend: Arc<dyn TextBackend>,
    cache: Arc<ResponseCache>,
    limits: Limits,
    calls: AtomicU64,
    hits: AtomicU64,
}

impl Generator {
    pub fn new(backend: Arc<dyn TextBackend>, cache: Arc<ResponseCache>, limits: Limits) -> Self {
        Generator {
            backend,
            cache,
            limits,
            calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    /// Backend calls made so far (cache misses).
    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub async fn complete(&self, request: &PromptRequest, params: &GenerationParams) -> Result<Completion, BackendError> {
        let key = cache_key(request, params);
        if let Some(text) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Completion {
                text: text.to_string(),
                cache_key: key,
                cached: true,
            });
        }
        let text = {
            let _permit = self.limits.acquire().await;
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.backend.generate(request, params).await?
        };
        self.cache.insert(&CacheEntry {
            cache_key: key.clone(),
            request: CachedRequest {
                prompt: request.clone(),
                params: params.clone(),
            },
            response_text: text.clone(),
            timestamp: Utc::now(),
            backend_id: self.backend.id().to_string(),
        })?;
        Ok(Completion {
            text,
            cache_key: key,
            cached: false,
        })
    }
}
