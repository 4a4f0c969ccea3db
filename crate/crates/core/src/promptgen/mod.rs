//! Prompt construction and generator-reply parsing.
//!
//! Three prompt kinds exist: `factual` (answers must be "yes"),
//! `contrastive` (answers must be "no") and `cit`, which asks for both with
//! detailed justifications. Every template carries the same output-format
//! addendum so replies follow a parseable line protocol:
//!
//! ```text
//! 1. Q: Is there a cat in the image?
//! A: Yes
//! C: object
//! ```

mod parse;
mod template;

pub use parse::{
    parse_qa_response, render_qa_response, LineDisposition, ParseContext, ParseOutcome,
    QuarantineReason, QuarantineRecord,
};
pub use template::{
    build_cit_prompt, build_contrastive_prompt, build_factual_prompt, build_prompt,
    build_prompt_versioned, template_text, FORMAT_ADDENDUM,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::io::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Factual,
    Contrastive,
    Cit,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Factual => "factual",
            PromptKind::Contrastive => "contrastive",
            PromptKind::Cit => "cit",
        }
    }

    /// Polarity every pair from this kind must carry; `None` for `cit`,
    /// whose replies mix both.
    pub fn required_polarity(self) -> Option<Polarity> {
        match self {
            PromptKind::Factual => Some(Polarity::Factual),
            PromptKind::Contrastive => Some(Polarity::Contrastive),
            PromptKind::Cit => None,
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "factual" => Ok(PromptKind::Factual),
            "contrastive" => Ok(PromptKind::Contrastive),
            "cit" => Ok(PromptKind::Cit),
            other => Err(format!("unknown prompt kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub kind: PromptKind,
    pub caption: String,
    pub template_version: String,
    pub rendered: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Factual,
    Contrastive,
}

impl Polarity {
    pub fn gold_answer(self) -> Answer {
        match self {
            Polarity::Factual => Answer::Yes,
            Polarity::Contrastive => Answer::No,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Factual => "factual",
            Polarity::Contrastive => "contrastive",
        }
    }
}

/// Gold answer of a pair. The positive class is `Yes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Object,
    Attribute,
    Action,
    #[default]
    Unknown,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Object => "object",
            Category::Attribute => "attribute",
            Category::Action => "action",
            Category::Unknown => "unknown",
        }
    }

    /// Lenient parse of a `C:` value; anything unrecognized is `Unknown`.
    pub fn parse_loose(text: &str) -> Category {
        let word = text
            .trim()
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_ascii_lowercase();
        match word.trim_end_matches('s') {
            "object" => Category::Object,
            "attribute" => Category::Attribute,
            "action" => Category::Action,
            _ => Category::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub cache_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub qa_id: String,
    pub image_id: u64,
    pub question: String,
    pub gold_answer: Answer,
    pub polarity: Polarity,
    pub category: Category,
    pub explanation: Option<String>,
    pub source_caption_annotation_id: u64,
    pub provenance: Provenance,
}

impl QAPair {
    /// Builds a pair with its id and gold answer derived from the inputs.
    pub fn new(
        image_id: u64,
        question: impl Into<String>,
        polarity: Polarity,
        category: Category,
        explanation: Option<String>,
        source_caption_annotation_id: u64,
        provenance: Provenance,
    ) -> Self {
        let question = question.into();
        QAPair {
            qa_id: qa_id(image_id, &question, polarity),
            image_id,
            gold_answer: polarity.gold_answer(),
            question,
            polarity,
            category,
            explanation,
            source_caption_annotation_id,
            provenance,
        }
    }
}

/// Stable 16-hex-digit id of `(image_id, question, polarity)`.
pub fn qa_id(image_id: u64, question: &str, polarity: Polarity) -> String {
    let digest = sha256_hex(format!("{image_id}\n{question}\n{}", polarity.as_str()).as_bytes());
    digest[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("caption is empty")]
    EmptyCaption,
    #[error("unknown template version `{0}`")]
    UnknownTemplateVersion(String),
}
