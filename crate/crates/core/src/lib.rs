//! Contrastive yes/no QA generation and hallucination evaluation for
//! vision-language models.
//!
//! The pipeline runs in stages, each backed by one module:
//!
//! - [`corpus`]: COCO-caption ingestion, split identity and the leakage guard.
//! - [`promptgen`]: factual / contrastive / CoT prompt templates and the
//!   line-protocol parser that turns generator replies into [`QAPair`]s.
//! - [`backend`]: pluggable text generation (HTTP chat endpoint or the
//!   offline rule-based stub) behind a rate limiter, retry policy and
//!   append-only response cache.
//! - [`review`]: three-moderator blind review, majority adjudication and
//!   error-rate reporting, plus the review HTTP service.
//! - [`harness`]: querying a vision-language model, answer normalization and
//!   the five classification metrics.
//! - [`citgen`]: contrastive instruction-tuning samples and their exports.
//!
//! Metric arithmetic is generic over [`Scalar`]; the aliases below fix the
//! common instantiations.

pub mod backend;
pub mod citgen;
pub mod config;
pub mod corpus;
pub mod generate;
pub mod harness;
pub mod io;
pub mod manifest;
pub mod promptgen;
pub mod review;
pub mod scalar;

pub use corpus::{CaptionMode, CaptionRecord, CorpusSplit, Split};
pub use harness::{ConfusionMatrix, Label, Metric, ModelAnswer};
pub use promptgen::{Category, Polarity, PromptKind, PromptRequest, QAPair};
pub use scalar::Scalar;

pub use num_rational::Rational64;

/// Metrics computed in double precision; the type written to `metrics.json`.
pub type MetricsReportF64 = harness::MetricsReport<f64>;
/// Metrics computed in single precision.
pub type MetricsReportF32 = harness::MetricsReport<f32>;
/// Metrics as exact integer ratios, for identity checks with zero tolerance.
pub type ExactMetricsReport = harness::MetricsReport<Rational64>;

/// Version tag of the bundled prompt templates and output-format addendum.
pub const TEMPLATE_VERSION: &str = "v1";
