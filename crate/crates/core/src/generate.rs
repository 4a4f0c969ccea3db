//! The generation stage: one backend call per (caption, kind), replies
//! parsed into pairs and quarantine records.

use std::collections::HashSet;

use futures::stream::{self, StreamExt, TryStreamExt};
use tracing::info;

use crate::backend::{BackendError, GenerationParams, Generator};
use crate::corpus::{select_captions, CaptionMode, CorpusSplit};
use crate::promptgen::{
    build_prompt, parse_qa_response, ParseContext, PromptError, PromptKind, PromptRequest, Provenance, QAPair,
    QuarantineReason, QuarantineRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("image {image_id}, annotation {annotation_id}: {source}")]
    Prompt {
        image_id: u64,
        annotation_id: u64,
        source: PromptError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOutcome {
    /// Sorted by qa_id.
    pub pairs: Vec<QAPair>,
    /// In request order.
    pub quarantine: Vec<QuarantineRecord>,
    pub requests: usize,
    pub images: usize,
}

struct Job {
    image_id: u64,
    annotation_id: u64,
    request: PromptRequest,
}

fn jobs(corpus: &CorpusSplit, kinds: &[PromptKind], mode: CaptionMode) -> Result<Vec<Job>, GenerateError> {
    let mut out = Vec::new();
    for record in corpus.records() {
        for caption in select_captions(record, mode) {
            for &kind in kinds {
                let request = build_prompt(kind, &caption.text).map_err(|source| GenerateError::Prompt {
                    image_id: record.image_id,
                    annotation_id: caption.annotation_id,
                    source,
                })?;
                out.push(Job {
                    image_id: record.image_id,
                    annotation_id: caption.annotation_id,
                    request,
                });
            }
        }
    }
    Ok(out)
}

/// Runs every prompt for `corpus` through `generator`.
///
/// Requests are issued in canonical order (image, caption, kind) with at
/// most `max_concurrency` in flight, and results are consumed in that same
/// order, so the outcome does not depend on completion timing. A question
/// already produced for the same image and polarity is quarantined as a
/// duplicate. On a backend error the stage stops; replies received so far
/// stay in the cache.
pub async fn generate_pairs(
    generator: &Generator,
    corpus: &CorpusSplit,
    kinds: &[PromptKind],
    mode: CaptionMode,
    params: &GenerationParams,
) -> Result<GenerateOutcome, GenerateError> {
    let jobs = jobs(corpus, kinds, mode)?;
    let width = generator.limits().max_concurrency().max(1);
    let replies: Vec<_> = stream::iter(&jobs)
        .map(|job| async move { generator.complete(&job.request, params).await })
        .buffered(width)
        .try_collect()
        .await?;

    let mut outcome = GenerateOutcome {
        requests: jobs.len(),
        images: corpus.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (job, reply) in jobs.iter().zip(replies) {
        let ctx = ParseContext {
            kind: job.request.kind,
            image_id: job.image_id,
            annotation_id: job.annotation_id,
            provenance: Provenance {
                backend_id: generator.backend_id().to_string(),
                cache_key: reply.cache_key.clone(),
            },
        };
        let parsed = parse_qa_response(&reply.text, &ctx);
        outcome.quarantine.extend(parsed.quarantine);
        for pair in parsed.pairs {
            if seen.insert(pair.qa_id.clone()) {
                outcome.pairs.push(pair);
            } else {
                outcome.quarantine.push(QuarantineRecord {
                    image_id: job.image_id,
                    annotation_id: job.annotation_id,
                    kind: job.request.kind,
                    line: 0,
                    text: pair.question,
                    reason: QuarantineReason::DuplicateQuestion,
                    cache_key: reply.cache_key.clone(),
                });
            }
        }
    }
    outcome.pairs.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    info!(
        images = outcome.images,
        requests = outcome.requests,
        pairs = outcome.pairs.len(),
        quarantined = outcome.quarantine.len(),
        backend_calls = generator.backend_calls(),
        cache_hits = generator.cache_hits(),
        "generation finished"
    );
    Ok(outcome)
}
