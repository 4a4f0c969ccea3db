//! Contrastive instruction-tuning samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::backend::{GenerationParams, Generator};
use crate::corpus::{assert_disjoint, CaptionMode, CorpusSplit, LeakageReport};
use crate::generate::{generate_pairs, GenerateError};
use crate::harness::first_token;
use crate::io;
use crate::manifest::Manifest;
use crate::promptgen::{Polarity, PromptKind, QAPair, QuarantineReason, QuarantineRecord};

/// Extra characters a CoT answer needs beyond its leading yes/no.
pub const MIN_EXPLANATION_CHARS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub sample_id: String,
    pub image_id: u64,
    /// Image file name.
    pub image: String,
    pub question: String,
    pub answer: String,
    pub polarity: Polarity,
    pub has_cot: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleViolation {
    #[error("answer of a {polarity} sample must start with `{expected}`, found {found:?}")]
    FirstToken {
        polarity: &'static str,
        expected: &'static str,
        found: Option<String>,
    },
    #[error("CoT answer has no explanation beyond its leading `{0}`")]
    NoExplanation(String),
}

/// Checks the first-token and explanation-length invariants.
pub fn validate_sample(sample: &InstructionSample) -> Result<(), SampleViolation> {
    let expected = match sample.polarity {
        Polarity::Factual => "yes",
        Polarity::Contrastive => "no",
    };
    let found = first_token(&sample.answer);
    if found.as_deref() != Some(expected) {
        return Err(SampleViolation::FirstToken {
            polarity: sample.polarity.as_str(),
            expected,
            found,
        });
    }
    if sample.has_cot && sample.answer.trim().chars().count() <= expected.len() + MIN_EXPLANATION_CHARS {
        return Err(SampleViolation::NoExplanation(expected.to_string()));
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum CitError {
    #[error("{0}")]
    Leakage(LeakageReport),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("sample {sample_id}: {violation}")]
    Invalid {
        sample_id: String,
        violation: SampleViolation,
    },
    #[error("no samples to export")]
    Empty,
    #[error("unknown export format `{0}` (expected conversations_json or qa_jsonl)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Default)]
pub struct CitOutcome {
    /// Sorted by sample_id.
    pub samples: Vec<InstructionSample>,
    pub quarantine: Vec<QuarantineRecord>,
    pub images: usize,
}

impl CitOutcome {
    pub fn polarity_counts(&self) -> (u64, u64) {
        polarity_counts(&self.samples)
    }
}

pub fn polarity_counts(samples: &[InstructionSample]) -> (u64, u64) {
    let factual = samples
        .iter()
        .filter(|s| s.polarity == Polarity::Factual)
        .count() as u64;
    (factual, samples.len() as u64 - factual)
}

fn to_sample(pair: QAPair, file_name: &str) -> InstructionSample {
    InstructionSample {
        sample_id: pair.qa_id,
        image_id: pair.image_id,
        image: file_name.to_string(),
        question: pair.question,
        answer: pair.explanation.unwrap_or_default(),
        polarity: pair.polarity,
        has_cot: true,
    }
}

/// CoT samples from `train`, refusing to start if `train` shares an image
/// with `eval`. Parsed pairs whose answer lacks a real explanation are
/// quarantined rather than exported.
pub async fn generate_cit(
    eval: &CorpusSplit,
    train: &CorpusSplit,
    generator: &Generator,
    params: &GenerationParams,
    mode: CaptionMode,
) -> Result<CitOutcome, CitError> {
    assert_disjoint(eval, train).map_err(CitError::Leakage)?;
    let generated = generate_pairs(generator, train, &[PromptKind::Cit], mode, params).await?;
    let cache_keys: BTreeMap<&str, &str> = generated
        .pairs
        .iter()
        .map(|p| (p.qa_id.as_str(), p.provenance.cache_key.as_str()))
        .collect();
    let mut outcome = CitOutcome {
        quarantine: generated.quarantine.clone(),
        images: generated.images,
        ..Default::default()
    };
    for pair in generated.pairs.iter().cloned() {
        let file_name = train
            .get(pair.image_id)
            .map(|r| r.file_name.clone())
            .unwrap_or_default();
        let annotation_id = pair.source_caption_annotation_id;
        let sample = to_sample(pair, &file_name);
        match validate_sample(&sample) {
            Ok(()) => outcome.samples.push(sample),
            Err(_) => outcome.quarantine.push(QuarantineRecord {
                image_id: sample.image_id,
                annotation_id,
                kind: PromptKind::Cit,
                line: 0,
                text: format!("{} {}", sample.question, sample.answer),
                reason: QuarantineReason::MissingExplanation,
                cache_key: cache_keys[sample.sample_id.as_str()].to_string(),
            }),
        }
    }
    let with_samples = outcome
        .samples
        .iter()
        .map(|s| s.image_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let (f, c) = outcome.polarity_counts();
    info!(
        samples = outcome.samples.len(),
        factual = f,
        contrastive = c,
        images = outcome.images,
        images_with_samples = with_samples,
        pairs_per_image = if outcome.images == 0 {
            0.0
        } else {
            outcome.samples.len() as f64 / outcome.images as f64
        },
        "cit generation finished"
    );
    Ok(outcome)
}

/// Replaces every answer by a bare `Yes.` or `No.`.
pub fn strip_cot(samples: &[InstructionSample]) -> Vec<InstructionSample> {
    samples
        .iter()
        .map(|s| InstructionSample {
            answer: match s.polarity {
                Polarity::Factual => "Yes.".into(),
                Polarity::Contrastive => "No.".into(),
            },
            has_cot: false,
            ..s.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    ConversationsJson,
    QaJsonl,
}

impl ExportFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportFormat::ConversationsJson => "conversations_json",
            ExportFormat::QaJsonl => "qa_jsonl",
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExportFormat {
    type Err = CitError;

    fn from_str(s: &str) -> Result<Self, CitError> {
        match s {
            "conversations_json" => Ok(ExportFormat::ConversationsJson),
            "qa_jsonl" => Ok(ExportFormat::QaJsonl),
            other => Err(CitError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize)]
struct Conversation<'a> {
    id: &'a str,
    image: &'a str,
    conversations: [Turn; 2],
}

#[derive(Serialize)]
struct Turn {
    from: &'static str,
    value: String,
}

/// Serializes `samples` after validating each one.
///
/// `qa_jsonl` keeps sample_id order. `conversations_json` is a JSON array in
/// an order shuffled by `seed`; the shuffle starts from sample_id order so
/// the result depends only on the sample set and the seed.
pub fn export_instruction_dataset(
    samples: &[InstructionSample],
    format: ExportFormat,
    seed: u64,
) -> Result<Vec<u8>, CitError> {
    if samples.is_empty() {
        return Err(CitError::Empty);
    }
    for s in samples {
        validate_sample(s).map_err(|violation| CitError::Invalid {
            sample_id: s.sample_id.clone(),
            violation,
        })?;
    }
    let mut ordered: Vec<&InstructionSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    match format {
        ExportFormat::QaJsonl => Ok(io::to_jsonl_bytes(&ordered)),
        ExportFormat::ConversationsJson => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ordered.shuffle(&mut rng);
            let entries: Vec<Conversation> = ordered
                .iter()
                .map(|s| Conversation {
                    id: &s.sample_id,
                    image: &s.image,
                    conversations: [
                        Turn {
                            from: "human",
                            value: format!("<image>\n{}", s.question),
                        },
                        Turn {
                            from: "gpt",
                            value: s.answer.clone(),
                        },
                    ],
                })
                .collect();
            let mut bytes = serde_json::to_vec_pretty(&entries).expect("conversations serialize");
            bytes.push(b'\n');
            Ok(bytes)
        }
    }
}

/// Manifest describing a CIT sample set.
pub fn cit_manifest(samples: &[InstructionSample], quarantined: usize, train: &CorpusSplit, eval: &CorpusSplit, seed: u64) -> Manifest {
    let (f, c) = polarity_counts(samples);
    Manifest::new("cit generate")
        .seed("generation", seed)
        .source("train_corpus", train.source_digest())
        .source("eval_corpus", eval.source_digest())
        .count("samples", samples.len() as u64)
        .count("factual", f)
        .count("contrastive", c)
        .count("quarantined", quarantined as u64)
        .count("train_images", train.len() as u64)
        .setting("has_cot", samples.first().is_none_or(|s| s.has_cot).to_string())
}
