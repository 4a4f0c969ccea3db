use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Category, Polarity, PromptKind, Provenance, QAPair};
use crate::harness::first_token;

/// Where a parsed reply came from.
#[derive(Debug, Clone)]
pub struct ParseContext {
    pub kind: PromptKind,
    pub image_id: u64,
    pub annotation_id: u64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuarantineReason {
    #[serde(rename = "empty response")]
    EmptyResponse,
    #[serde(rename = "polarity mismatch")]
    PolarityMismatch,
    #[serde(rename = "missing question")]
    MissingQuestion,
    #[serde(rename = "missing answer")]
    MissingAnswer,
    #[serde(rename = "question without question mark")]
    NoQuestionMark,
    #[serde(rename = "unparseable answer")]
    UnparseableAnswer,
    #[serde(rename = "duplicate question")]
    DuplicateQuestion,
    #[serde(rename = "unrecognized line")]
    UnrecognizedLine,
    #[serde(rename = "missing explanation")]
    MissingExplanation,
}

impl fmt::Display for QuarantineReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("reason serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// A rejected fragment of a generator reply, kept for auditing yield.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub image_id: u64,
    pub annotation_id: u64,
    pub kind: PromptKind,
    /// 1-based line number of the first offending line; 0 for whole-reply issues.
    pub line: usize,
    pub text: String,
    pub reason: QuarantineReason,
    pub cache_key: String,
}

/// What each input line became.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineDisposition {
    /// First line of the `n`th accepted pair.
    Pair(usize),
    /// Answer, category or explanation line of the `n`th accepted pair.
    Continuation(usize),
    /// Part of the `n`th quarantine record.
    Quarantined(usize),
    Blank,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub pairs: Vec<QAPair>,
    pub quarantine: Vec<QuarantineRecord>,
    /// One entry per line of the input, in order.
    pub lines: Vec<LineDisposition>,
}

struct Patterns {
    question: Regex,
    inline_answer: Regex,
    answer: Regex,
    category: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        question: Regex::new(r"^\s*(?:[-*]\s*)?(?:\d+\s*[.)]\s*)?[Qq]\s*:\s*(.*)$").unwrap(),
        inline_answer: Regex::new(r"^(.*?)\s+[Aa]\s*:\s*(.*)$").unwrap(),
        answer: Regex::new(r"^\s*[Aa]\s*:\s*(.*)$").unwrap(),
        category: Regex::new(r"^\s*[Cc]\s*:\s*(.*)$").unwrap(),
    })
}

#[derive(Default)]
struct Item {
    first_line: usize,
    line_indices: Vec<usize>,
    raw: Vec<String>,
    question: String,
    answer: Option<String>,
    category: Category,
    extra: Vec<String>,
}

/// Parses a generator reply written in the numbered `Q:` / `A:` / `C:` line
/// protocol.
///
/// Never fails: malformed fragments become quarantine records and every
/// input line is assigned a [`LineDisposition`]. For `factual` and
/// `contrastive` replies the gold answer comes from the prompt kind and the
/// parsed yes/no only has to agree with it; `cit` replies take polarity
/// from the answer's leading token and keep the full answer as explanation.
pub fn parse_qa_response(raw: &str, ctx: &ParseContext) -> ParseOutcome {
    let mut out = ParseOutcome::default();
    let lines: Vec<&str> = raw.lines().collect();
    out.lines = vec![LineDisposition::Blank; lines.len()];

    if raw.trim().is_empty() {
        out.quarantine.push(quarantine(ctx, 0, String::new(), QuarantineReason::EmptyResponse));
        return out;
    }

    let p = patterns();
    let mut seen = HashSet::new();
    let mut current: Option<Item> = None;

    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(caps) = p.question.captures(line) {
            if let Some(item) = current.take() {
                finish(item, ctx, &mut seen, &mut out);
            }
            let rest = caps[1].trim();
            let mut item = Item {
                first_line: idx,
                ..Default::default()
            };
            match p.inline_answer.captures(rest) {
                Some(inline) => {
                    item.question = inline[1].trim().to_string();
                    item.answer = Some(inline[2].trim().to_string());
                }
                None => item.question = rest.to_string(),
            }
            item.line_indices.push(idx);
            item.raw.push(line.to_string());
            current = Some(item);
            continue;
        }
        let Some(item) = current.as_mut() else {
            let reason = if p.answer.is_match(line) {
                QuarantineReason::MissingQuestion
            } else {
                QuarantineReason::UnrecognizedLine
            };
            out.lines[idx] = LineDisposition::Quarantined(out.quarantine.len());
            out.quarantine.push(quarantine(ctx, idx + 1, line.to_string(), reason));
            continue;
        };
        item.line_indices.push(idx);
        item.raw.push(line.to_string());
        if item.answer.is_none() {
            if let Some(caps) = p.answer.captures(line) {
                item.answer = Some(caps[1].trim().to_string());
                continue;
            }
        }
        if let Some(caps) = p.category.captures(line) {
            item.category = Category::parse_loose(&caps[1]);
            continue;
        }
        item.extra.push(line.trim().to_string());
    }
    if let Some(item) = current.take() {
        finish(item, ctx, &mut seen, &mut out);
    }
    out
}

fn quarantine(ctx: &ParseContext, line: usize, text: String, reason: QuarantineReason) -> QuarantineRecord {
    QuarantineRecord {
        image_id: ctx.image_id,
        annotation_id: ctx.annotation_id,
        kind: ctx.kind,
        line,
        text,
        reason,
        cache_key: ctx.provenance.cache_key.clone(),
    }
}

fn finish(item: Item, ctx: &ParseContext, seen: &mut HashSet<String>, out: &mut ParseOutcome) {
    match accept(&item, ctx) {
        Ok(pair) if seen.insert(pair.qa_id.clone()) => {
            let n = out.pairs.len();
            for (k, &line) in item.line_indices.iter().enumerate() {
                out.lines[line] = if k == 0 {
                    LineDisposition::Pair(n)
                } else {
                    LineDisposition::Continuation(n)
                };
            }
            out.pairs.push(pair);
        }
        outcome => {
            let reason = outcome.err().unwrap_or(QuarantineReason::DuplicateQuestion);
            let n = out.quarantine.len();
            for &line in &item.line_indices {
                out.lines[line] = LineDisposition::Quarantined(n);
            }
            out.quarantine
                .push(quarantine(ctx, item.first_line + 1, item.raw.join("\n"), reason));
        }
    }
}

fn accept(item: &Item, ctx: &ParseContext) -> Result<QAPair, QuarantineReason> {
    if item.question.is_empty() {
        return Err(QuarantineReason::MissingQuestion);
    }
    let answer = match item.answer.as_deref() {
        Some(a) if !a.is_empty() => a,
        _ => return Err(QuarantineReason::MissingAnswer),
    };
    if !item.question.ends_with('?') {
        return Err(QuarantineReason::NoQuestionMark);
    }
    let stated = match first_token(answer).as_deref() {
        Some("yes") => Some(Polarity::Factual),
        Some("no") => Some(Polarity::Contrastive),
        _ => None,
    };
    let (polarity, explanation) = match ctx.kind.required_polarity() {
        Some(required) => {
            if stated != Some(required) {
                return Err(QuarantineReason::PolarityMismatch);
            }
            (required, None)
        }
        None => {
            let polarity = stated.ok_or(QuarantineReason::UnparseableAnswer)?;
            let mut text = vec![answer.to_string()];
            text.extend(item.extra.iter().cloned());
            (polarity, Some(text.join("\n")))
        }
    };
    Ok(QAPair::new(
        ctx.image_id,
        item.question.clone(),
        polarity,
        item.category,
        explanation,
        ctx.annotation_id,
        ctx.provenance.clone(),
    ))
}

/// Writes pairs back out in the reply line protocol; the inverse of
/// [`parse_qa_response`] for well-formed pairs.
pub fn render_qa_response(pairs: &[QAPair]) -> String {
    let mut out = String::new();
    for (i, pair) in pairs.iter().enumerate() {
        out.push_str(&format!("{}. Q: {}\n", i + 1, pair.question));
        match &pair.explanation {
            Some(text) => out.push_str(&format!("A: {text}\n")),
            None => out.push_str(&format!("A: {:?}\n", pair.gold_answer)),
        }
        if pair.category != Category::Unknown {
            out.push_str(&format!("C: {}\n", pair.category.as_str()));
        }
    }
    out
}
