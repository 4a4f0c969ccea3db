//! Chat-completion HTTP client.

use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::limit::{with_retries, AttemptError, RetryError, RetryPolicy};
use super::{BackendError, GenerationParams, TextBackend};
use crate::promptgen::PromptRequest;

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "CIEM_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    api_key: String,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self, BackendError> {
        let url = url.into();
        let api_key = api_key.into();
        if url.trim().is_empty() {
            return Err(BackendError::Config("http backend needs an endpoint URL".into()));
        }
        if api_key.trim().is_empty() {
            return Err(BackendError::Config(format!("http backend needs a credential in {API_KEY_ENV}")));
        }
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend {
            client,
            url,
            api_key,
            retry,
        })
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(url: impl Into<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).unwrap_or_default();
        HttpBackend::new(url, key, retry, timeout)
    }

    pub fn request_body(request: &PromptRequest, params: &GenerationParams) -> Value {
        json!({
            "model": params.model_name,
            "messages": [{"role": "user", "content": request.rendered}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        })
    }
}

/// Text of the first choice of a chat-completion reply.
pub fn first_choice_text(body: &Value) -> Option<&str> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

/// Maps a send failure or status code to a retry decision.
pub(crate) fn classify_status(status: StatusCode, body: &str) -> AttemptError {
    let msg = format!("HTTP {}: {}", status.as_u16(), truncate(body, 200));
    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        AttemptError::retryable(msg)
    } else {
        AttemptError::fatal(msg)
    }
}

pub(crate) fn classify_send_error(err: &reqwest::Error) -> AttemptError {
    if err.is_timeout() {
        AttemptError::retryable(format!("timeout: {err}"))
    } else {
        AttemptError::retryable(format!("transport: {err}"))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[async_trait]
impl TextBackend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    async fn generate(&self, request: &PromptRequest, params: &GenerationParams) -> Result<String, BackendError> {
        let body = HttpBackend::request_body(request, params);
        let result = with_retries(&self.retry, || async {
            let resp = self
                .client
                .post(&self.url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send()
                .await
                .map_err(|e| classify_send_error(&e))?;
            let status = resp.status();
            let text = resp.text().await.map_err(|e| classify_send_error(&e))?;
            if !status.is_success() {
                return Err(classify_status(status, &text));
            }
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| AttemptError::fatal(format!("malformed response body: {e}")))?;
            first_choice_text(&value)
                .map(str::to_string)
                .ok_or_else(|| AttemptError::fatal("malformed response body: missing choices[0].message.content"))
        })
        .await;
        result.map_err(|e| match e {
            RetryError::Exhausted { attempts, last } => BackendError::RetriesExhausted { attempts, last },
            RetryError::Fatal(msg) if msg.starts_with("malformed") => BackendError::MalformedResponse(msg),
            RetryError::Fatal(msg) => BackendError::Request(msg),
        })
    }
}
