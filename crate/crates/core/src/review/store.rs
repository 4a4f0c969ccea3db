use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{adjudicate_verdicts, AdjudicatedPair, Judgment, ReviewError};
use crate::corpus::CorpusSplit;
use crate::io::{self, IoError};
use crate::promptgen::{Answer, Category, Polarity, QAPair};

pub const MODERATORS_PER_CAMPAIGN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub qa_id: String,
    pub moderator_id: String,
    pub round_index: u8,
    pub judgment: Judgment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub timestamp: DateTime<Utc>,
}

/// A verdict as sent by a moderator; the server fills round and time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictSubmission {
    pub qa_id: String,
    pub moderator_id: String,
    pub judgment: Judgment,
    #[serde(default)]
    pub round_index: Option<u8>,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

impl From<Verdict> for VerdictSubmission {
    fn from(v: Verdict) -> Self {
        VerdictSubmission {
            qa_id: v.qa_id,
            moderator_id: v.moderator_id,
            judgment: v.judgment,
            round_index: Some(v.round_index),
            note: v.note,
            timestamp: Some(v.timestamp),
        }
    }
}

/// What a moderator sees for one pair. Carries nothing about other
/// moderators' verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub qa_id: String,
    pub image_id: u64,
    pub file_name: Option<String>,
    pub caption: Option<String>,
    pub question: String,
    pub gold_answer: Answer,
    pub polarity: Polarity,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Duplicate,
    UnknownQa,
    UnknownModerator,
    RoundMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitOutcome {
    Accepted(Verdict),
    Rejected(RejectReason),
}

/// The fixed inputs of one review: pairs, moderators and image context.
#[derive(Debug, Clone)]
pub struct Campaign {
    moderators: Vec<String>,
    pairs: BTreeMap<String, QAPair>,
    context: HashMap<(u64, u64), (String, String)>,
}

impl Campaign {
    /// Exactly three distinct moderators; their list order fixes round 1-3.
    pub fn new(pairs: Vec<QAPair>, moderators: Vec<String>, corpus: Option<&CorpusSplit>) -> Result<Self, ReviewError> {
        let distinct: HashSet<&String> = moderators.iter().collect();
        if moderators.len() != MODERATORS_PER_CAMPAIGN
            || distinct.len() != MODERATORS_PER_CAMPAIGN
            || moderators.iter().any(|m| m.trim().is_empty())
        {
            return Err(ReviewError::Moderators(moderators));
        }
        let mut map = BTreeMap::new();
        for p in pairs {
            let id = p.qa_id.clone();
            if map.insert(id.clone(), p).is_some() {
                return Err(ReviewError::DuplicatePair(id));
            }
        }
        let mut context = HashMap::new();
        if let Some(corpus) = corpus {
            for r in corpus.records() {
                for c in &r.captions {
                    context.insert((r.image_id, c.annotation_id), (r.file_name.clone(), c.text.clone()));
                }
            }
        }
        Ok(Campaign {
            moderators,
            pairs: map,
            context,
        })
    }

    pub fn moderators(&self) -> &[String] {
        &self.moderators
    }

    /// Pairs in canonical qa_id order.
    pub fn pairs(&self) -> impl Iterator<Item = &QAPair> {
        self.pairs.values()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn round_of(&self, moderator: &str) -> Option<u8> {
        self.moderators
            .iter()
            .position(|m| m == moderator)
            .map(|i| i as u8 + 1)
    }

    fn item(&self, pair: &QAPair) -> ReviewItem {
        let ctx = self.context.get(&(pair.image_id, pair.source_caption_annotation_id));
        ReviewItem {
            qa_id: pair.qa_id.clone(),
            image_id: pair.image_id,
            file_name: ctx.map(|c| c.0.clone()),
            caption: ctx.map(|c| c.1.clone()),
            question: pair.question.clone(),
            gold_answer: pair.gold_answer,
            polarity: pair.polarity,
            category: pair.category,
        }
    }
}

/// Append-only verdict log over one campaign.
#[derive(Debug)]
pub struct ReviewStore {
    campaign: Campaign,
    verdicts: Vec<Verdict>,
    by_pair: HashMap<String, Vec<usize>>,
    pending_for: HashMap<String, BTreeSet<String>>,
    log: Option<(PathBuf, File)>,
}

impl ReviewStore {
    pub fn in_memory(campaign: Campaign) -> Self {
        let pending_for = campaign
            .moderators
            .iter()
            .map(|m| (m.clone(), campaign.pairs.keys().cloned().collect()))
            .collect();
        ReviewStore {
            campaign,
            verdicts: Vec::new(),
            by_pair: HashMap::new(),
            pending_for,
            log: None,
        }
    }

    /// Opens (or creates) `verdicts.jsonl` at `path`, replaying its verdicts.
    pub fn open(campaign: Campaign, path: &Path) -> Result<Self, ReviewError> {
        let mut store = ReviewStore::in_memory(campaign);
        if path.exists() {
            let existing: Vec<Verdict> = io::read_jsonl(path)?;
            for v in existing {
                store.check(&v.qa_id, &v.moderator_id, Some(v.round_index)).map_err(|reason| {
                    ReviewError::InvalidStoredVerdict {
                        qa_id: v.qa_id.clone(),
                        moderator_id: v.moderator_id.clone(),
                        reason,
                    }
                })?;
                store.record(v);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| IoError::io(path, e))?;
        store.log = Some((path.to_path_buf(), file));
        Ok(store)
    }

    pub fn campaign(&self) -> &Campaign {
        &self.campaign
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    /// Lowest-qa_id pair `moderator` has not judged yet.
    pub fn assign_next(&self, moderator: &str) -> Result<Option<ReviewItem>, ReviewError> {
        let pending = self
            .pending_for
            .get(moderator)
            .ok_or_else(|| ReviewError::UnknownModerator(moderator.to_string()))?;
        Ok(pending
            .first()
            .map(|id| self.campaign.item(&self.campaign.pairs[id])))
    }

    pub fn progress(&self, moderator: &str) -> Result<Progress, ReviewError> {
        let pending = self
            .pending_for
            .get(moderator)
            .ok_or_else(|| ReviewError::UnknownModerator(moderator.to_string()))?;
        Ok(Progress {
            done: self.campaign.len() - pending.len(),
            remaining: pending.len(),
        })
    }

    /// What [`submit`](Self::submit) would decide, without recording anything.
    pub fn check_submission(&self, sub: &VerdictSubmission) -> Result<u8, RejectReason> {
        self.check(&sub.qa_id, &sub.moderator_id, sub.round_index)
    }

    fn check(&self, qa_id: &str, moderator: &str, round: Option<u8>) -> Result<u8, RejectReason> {
        let assigned = self
            .campaign
            .round_of(moderator)
            .ok_or(RejectReason::UnknownModerator)?;
        if !self.campaign.pairs.contains_key(qa_id) {
            return Err(RejectReason::UnknownQa);
        }
        if round.is_some_and(|r| r != assigned) {
            return Err(RejectReason::RoundMismatch);
        }
        if !self.pending_for[moderator].contains(qa_id) {
            return Err(RejectReason::Duplicate);
        }
        Ok(assigned)
    }

    fn record(&mut self, v: Verdict) {
        if let Some(p) = self.pending_for.get_mut(&v.moderator_id) {
            p.remove(&v.qa_id);
        }
        self.by_pair
            .entry(v.qa_id.clone())
            .or_default()
            .push(self.verdicts.len());
        self.verdicts.push(v);
    }

    /// Validates, persists and records one verdict.
    pub fn submit(&mut self, sub: VerdictSubmission) -> Result<SubmitOutcome, ReviewError> {
        let round_index = match self.check(&sub.qa_id, &sub.moderator_id, sub.round_index) {
            Ok(r) => r,
            Err(reason) => return Ok(SubmitOutcome::Rejected(reason)),
        };
        let verdict = Verdict {
            qa_id: sub.qa_id,
            moderator_id: sub.moderator_id,
            round_index,
            judgment: sub.judgment,
            note: sub.note.filter(|n| !n.is_empty()),
            timestamp: sub.timestamp.unwrap_or_else(Utc::now),
        };
        if let Some((path, file)) = self.log.as_mut() {
            let mut line = serde_json::to_vec(&verdict).expect("verdict serializes");
            line.push(b'\n');
            file.write_all(&line).map_err(|e| IoError::io(path, e))?;
            file.sync_data().map_err(|e| IoError::io(path, e))?;
        }
        self.record(verdict.clone());
        Ok(SubmitOutcome::Accepted(verdict))
    }

    /// `None` for an unknown qa_id; `Some(Err(n))` while only `n < 3`
    /// verdicts exist.
    pub fn adjudicate(&self, qa_id: &str) -> Option<Result<AdjudicatedPair, usize>> {
        let pair = self.campaign.pairs.get(qa_id)?;
        let verdicts: Vec<Verdict> = self
            .by_pair
            .get(qa_id)
            .map(|idx| idx.iter().map(|&i| self.verdicts[i].clone()).collect())
            .unwrap_or_default();
        Some(match adjudicate_verdicts(&verdicts) {
            Some(final_judgment) => Ok(AdjudicatedPair {
                qa: pair.clone(),
                verdicts,
                final_judgment,
            }),
            None => Err(verdicts.len()),
        })
    }

    /// Adjudicated pairs and pending qa_ids, both in qa_id order.
    pub fn adjudicate_all(&self) -> (Vec<AdjudicatedPair>, Vec<String>) {
        let mut done = Vec::new();
        let mut pending = Vec::new();
        for id in self.campaign.pairs.keys() {
            match self.adjudicate(id).expect("campaign pair") {
                Ok(a) => done.push(a),
                Err(_) => pending.push(id.clone()),
            }
        }
        (done, pending)
    }

    /// Pairs judged correct by majority; refused while any pair is pending.
    pub fn export_clean(&self) -> Result<Vec<QAPair>, ReviewError> {
        let (done, pending) = self.adjudicate_all();
        if !pending.is_empty() {
            return Err(ReviewError::Pending(pending));
        }
        Ok(super::export_clean(&done))
    }
}
