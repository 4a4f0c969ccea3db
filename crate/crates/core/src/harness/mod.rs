//! Vision-language model evaluation: querying, answer normalization and
//! scoring.

mod ask;
mod metrics;
mod normalize;

pub use ask::{
    ask_model, evaluate, resolve_image_ref, EvalItem, EvalOptions, HttpVisionModel, ScriptedModel, VisionModel,
    TRANSPORT_ERROR_MARKER,
};
pub use metrics::{f1_score, score, ConfusionMatrix, Metric, MetricsReport, ScoreError};
pub use normalize::{first_token, normalize_answer, tokens, Label, SCAN_WINDOW};

use serde::{Deserialize, Serialize};

/// One model reply to one QA pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub qa_id: String,
    pub raw_text: String,
    pub normalized: Label,
    pub latency_ms: u64,
}

impl ModelAnswer {
    pub fn new(qa_id: impl Into<String>, raw_text: impl Into<String>, latency_ms: u64) -> Self {
        let raw_text = raw_text.into();
        ModelAnswer {
            qa_id: qa_id.into(),
            normalized: normalize_answer(&raw_text),
            raw_text,
            latency_ms,
        }
    }

    pub fn is_transport_error(&self) -> bool {
        self.raw_text == TRANSPORT_ERROR_MARKER
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{failed} of {total} model queries failed in transport (limit {limit_pct:.1}%)")]
    TooManyTransportFailures {
        failed: usize,
        total: usize,
        limit_pct: f64,
        answers: Vec<ModelAnswer>,
    },
    #[error("vision model configuration: {0}")]
    Config(String),
}
