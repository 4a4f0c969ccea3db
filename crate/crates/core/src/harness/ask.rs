use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde_json::{json, Value};
use tracing::warn;

use super::{HarnessError, ModelAnswer};
use crate::backend::limit::{with_retries, AttemptError, Limits, RetryPolicy};
use crate::backend::{classify_send_error, classify_status, first_choice_text};

/// Recorded as `raw_text` when a query fails after all retries.
pub const TRANSPORT_ERROR_MARKER: &str = "«transport-error»";

#[async_trait]
pub trait VisionModel: Send + Sync {
    /// Asks `question` about the image at `image_ref`; `Err` carries a
    /// transport failure description.
    async fn ask(&self, image_ref: &str, question: &str) -> Result<String, String>;

    /// Whether answers record wall-clock latency. In-process models report
    /// 0 so their output files are reproducible.
    fn measures_latency(&self) -> bool {
        true
    }
}

/// Chat endpoint taking an image reference plus question text.
#[derive(Debug, Clone)]
pub struct HttpVisionModel {
    client: reqwest::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpVisionModel {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, HarnessError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(HttpVisionModel {
            client,
            url: url.into(),
            model: model.into(),
            api_key: api_key.filter(|k| !k.is_empty()),
            retry,
        })
    }

    pub fn request_body(&self, image_ref: &str, question: &str) -> Value {
        json!({
            "model": self.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "image_ref", "value": image_ref},
                    {"type": "text", "value": question},
                ],
            }],
        })
    }
}

/// Reply text from a chat-completion body, a `{"text": ...}` body, or the
/// raw body when it is not JSON.
fn reply_text(body: &str) -> String {
    match serde_json::from_str::<Value>(body) {
        Ok(v) => first_choice_text(&v)
            .or_else(|| v.get("text").and_then(Value::as_str))
            .map(str::to_string)
            .unwrap_or_else(|| body.to_string()),
        Err(_) => body.to_string(),
    }
}

#[async_trait]
impl VisionModel for HttpVisionModel {
    async fn ask(&self, image_ref: &str, question: &str) -> Result<String, String> {
        let body = self.request_body(image_ref, question);
        with_retries(&self.retry, || async {
            let mut req = self.client.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().await.map_err(|e| classify_send_error(&e))?;
            let status = resp.status();
            let text = resp.text().await.map_err(|e| classify_send_error(&e))?;
            if !status.is_success() {
                return Err(classify_status(status, &text));
            }
            Ok::<_, AttemptError>(reply_text(&text))
        })
        .await
        .map_err(|e| e.to_string())
    }
}

/// In-process model driven by a closure, for offline runs and tests.
pub struct ScriptedModel<F> {
    respond: F,
}

impl<F> ScriptedModel<F>
where
    F: Fn(&str, &str) -> Result<String, String> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        ScriptedModel { respond }
    }
}

impl ScriptedModel<fn(&str, &str) -> Result<String, String>> {
    pub fn always_yes() -> Self {
        ScriptedModel::new(|_, _| Ok("Yes.".to_string()))
    }

    pub fn always_no() -> Self {
        ScriptedModel::new(|_, _| Ok("No.".to_string()))
    }
}

#[async_trait]
impl<F> VisionModel for ScriptedModel<F>
where
    F: Fn(&str, &str) -> Result<String, String> + Send + Sync,
{
    async fn ask(&self, image_ref: &str, question: &str) -> Result<String, String> {
        (self.respond)(image_ref, question)
    }

    fn measures_latency(&self) -> bool {
        false
    }
}

/// `images_root` joined with `file_name`, as a URL when the root is one.
pub fn resolve_image_ref(images_root: &str, file_name: &str) -> String {
    if images_root.starts_with("http://") || images_root.starts_with("https://") {
        format!("{}/{}", images_root.trim_end_matches('/'), file_name)
    } else {
        std::path::Path::new(images_root).join(file_name).display().to_string()
    }
}

/// Queries one pair. Never fails: transport failures become an
/// `Unparseable` answer carrying [`TRANSPORT_ERROR_MARKER`].
pub async fn ask_model(model: &dyn VisionModel, limits: &Limits, qa_id: &str, image_ref: &str, question: &str) -> ModelAnswer {
    let _permit = limits.acquire().await;
    let started = Instant::now();
    let reply = model.ask(image_ref, question).await;
    let latency_ms = if model.measures_latency() {
        started.elapsed().as_millis() as u64
    } else {
        0
    };
    match reply {
        Ok(text) => ModelAnswer::new(qa_id, text, latency_ms),
        Err(e) => {
            warn!(qa_id, error = %e, "model query failed");
            ModelAnswer::new(qa_id, TRANSPORT_ERROR_MARKER, latency_ms)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalItem {
    pub qa_id: String,
    pub image_ref: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Fraction of items allowed to fail in transport before the run fails.
    pub max_failure_rate: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { max_failure_rate: 0.10 }
    }
}

/// Asks every item, `limits.max_concurrency()` at a time, returning answers
/// in item order.
pub async fn evaluate(
    model: Arc<dyn VisionModel>,
    limits: &Limits,
    items: &[EvalItem],
    options: &EvalOptions,
) -> Result<Vec<ModelAnswer>, HarnessError> {
    let width = limits.max_concurrency().min(items.len().max(1));
    let answers: Vec<ModelAnswer> = stream::iter(items)
        .map(|item| {
            let model = model.clone();
            async move { ask_model(model.as_ref(), limits, &item.qa_id, &item.image_ref, &item.question).await }
        })
        .buffered(width)
        .collect()
        .await;
    let failed = answers.iter().filter(|a| a.is_transport_error()).count();
    if !answers.is_empty() && failed as f64 > options.max_failure_rate * answers.len() as f64 {
        return Err(HarnessError::TooManyTransportFailures {
            failed,
            total: answers.len(),
            limit_pct: options.max_failure_rate * 100.0,
            answers,
        });
    }
    Ok(answers)
}
