//! Three-moderator blind review of generated pairs.
//!
//! Each moderator judges every pair once; a pair is final when all three
//! verdicts exist and takes the majority judgment. Adjudication is always
//! recomputed from the verdict log.

pub mod server;
mod store;

pub use store::{
    Campaign, Progress, RejectReason, ReviewItem, ReviewStore, SubmitOutcome, Verdict, VerdictSubmission,
    MODERATORS_PER_CAMPAIGN,
};

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::IoError;
use crate::promptgen::{Polarity, QAPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgment {
    Correct,
    Incorrect,
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Judgment::Correct => "correct",
            Judgment::Incorrect => "incorrect",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicatedPair {
    pub qa: QAPair,
    pub verdicts: Vec<Verdict>,
    #[serde(rename = "final")]
    pub final_judgment: Judgment,
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("a campaign needs exactly 3 distinct non-empty moderator ids, got {0:?}")]
    Moderators(Vec<String>),
    #[error("duplicate qa_id {0} in review set")]
    DuplicatePair(String),
    #[error("unknown moderator `{0}`")]
    UnknownModerator(String),
    #[error("stored verdict ({qa_id}, {moderator_id}) rejected: {reason:?}")]
    InvalidStoredVerdict {
        qa_id: String,
        moderator_id: String,
        reason: RejectReason,
    },
    #[error("{} pair(s) still pending adjudication: {}", .0.len(), preview(.0))]
    Pending(Vec<String>),
    #[error(transparent)]
    Io(#[from] IoError),
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
    }
    s
}

/// Majority of exactly three verdicts from distinct moderators.
pub fn adjudicate_verdicts(verdicts: &[Verdict]) -> Option<Judgment> {
    if verdicts.len() != MODERATORS_PER_CAMPAIGN {
        return None;
    }
    let correct = verdicts
        .iter()
        .filter(|v| v.judgment == Judgment::Correct)
        .count();
    Some(if correct * 2 > verdicts.len() {
        Judgment::Correct
    } else {
        Judgment::Incorrect
    })
}

/// One row of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub count: u64,
    pub error_count: u64,
    /// Percent, full precision.
    pub error_rate: f64,
    /// Percent rounded half-up to one decimal, e.g. `"5.1"`.
    pub error_rate_display: String,
}

impl ErrorRow {
    pub fn new(count: u64, error_count: u64) -> Self {
        let error_rate = if count == 0 {
            0.0
        } else {
            100.0 * error_count as f64 / count as f64
        };
        ErrorRow {
            count,
            error_count,
            error_rate,
            error_rate_display: percent_one_decimal(error_count, count),
        }
    }
}

/// `100 * part / whole` rounded half-up to tenths, in integer arithmetic so
/// no binary-float tie is misrounded. `"0.0"` when `whole` is zero.
pub fn percent_one_decimal(part: u64, whole: u64) -> String {
    if whole == 0 {
        return "0.0".into();
    }
    let (part, whole) = (part as u128, whole as u128);
    let tenths = (2000 * part + whole) / (2 * whole);
    format!("{}.{}", tenths / 10, tenths % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub factual: ErrorRow,
    pub contrastive: ErrorRow,
    pub total: ErrorRow,
}

impl ErrorReport {
    pub fn from_counts(factual: (u64, u64), contrastive: (u64, u64)) -> Self {
        ErrorReport {
            factual: ErrorRow::new(factual.0, factual.1),
            contrastive: ErrorRow::new(contrastive.0, contrastive.1),
            total: ErrorRow::new(factual.0 + contrastive.0, factual.1 + contrastive.1),
        }
    }
}

pub fn error_report(adjudicated: &[AdjudicatedPair]) -> ErrorReport {
    let mut f = (0, 0);
    let mut c = (0, 0);
    for a in adjudicated {
        let row = match a.qa.polarity {
            Polarity::Factual => &mut f,
            Polarity::Contrastive => &mut c,
        };
        row.0 += 1;
        if a.final_judgment == Judgment::Incorrect {
            row.1 += 1;
        }
    }
    ErrorReport::from_counts(f, c)
}

/// Pairs with a correct majority, in qa_id order.
pub fn export_clean(adjudicated: &[AdjudicatedPair]) -> Vec<QAPair> {
    let mut out: Vec<QAPair> = adjudicated
        .iter()
        .filter(|a| a.final_judgment == Judgment::Correct)
        .map(|a| a.qa.clone())
        .collect();
    out.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    out
}

/// Persistent description of a review campaign, kept in the state directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignFile {
    pub qa: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    pub moderators: Vec<String>,
}

impl CampaignFile {
    pub const FILE_NAME: &'static str = "campaign.json";
    pub const VERDICTS_FILE_NAME: &'static str = "verdicts.jsonl";

    pub fn load(state_dir: &Path) -> Result<Self, IoError> {
        crate::io::read_json(&state_dir.join(Self::FILE_NAME))
    }

    pub fn save(&self, state_dir: &Path) -> Result<(), IoError> {
        crate::io::write_json_atomic(&state_dir.join(Self::FILE_NAME), self)
    }

    pub fn verdicts_path(state_dir: &Path) -> PathBuf {
        state_dir.join(Self::VERDICTS_FILE_NAME)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn verdict(moderator: &str, round: u8, judgment: Judgment) -> Verdict {
        Verdict {
            qa_id: "q".into(),
            moderator_id: moderator.into(),
            round_index: round,
            judgment,
            note: None,
            timestamp: Utc::now(),
        }
    }

    #[test]
    fn majority_examples() {
        use Judgment::*;
        let vs = |js: [Judgment; 3]| {
            js.iter()
                .enumerate()
                .map(|(i, j)| verdict(&format!("m{i}"), i as u8 + 1, *j))
                .collect::<Vec<_>>()
        };
        assert_eq!(adjudicate_verdicts(&vs([Correct, Correct, Incorrect])), Some(Correct));
        assert_eq!(adjudicate_verdicts(&vs([Incorrect, Incorrect, Incorrect])), Some(Incorrect));
        assert_eq!(adjudicate_verdicts(&vs([Incorrect, Correct, Incorrect])), Some(Incorrect));
        assert_eq!(adjudicate_verdicts(&vs([Correct, Correct, Correct])[..2]), None);
        assert_eq!(adjudicate_verdicts(&[]), None);
    }

    #[test]
    fn table_one_rows() {
        let r = ErrorReport::from_counts((40367, 2051), (37753, 1596));
        assert_eq!(r.factual.error_rate_display, "5.1");
        assert_eq!(r.contrastive.error_rate_display, "4.2");
        assert_eq!(r.total.count, 78120);
        assert_eq!(r.total.error_count, 3647);
        assert_eq!(r.total.error_rate_display, "4.7");
        assert!((r.total.error_rate - 4.668458781362).abs() < 1e-9);
    }

    #[test]
    fn rounding_is_half_up_at_exact_ties() {
        assert_eq!(percent_one_decimal(1, 2000), "0.1");
        assert_eq!(percent_one_decimal(1, 2001), "0.0");
        assert_eq!(percent_one_decimal(3, 8), "37.5");
        assert_eq!(percent_one_decimal(1, 3), "33.3");
        assert_eq!(percent_one_decimal(2, 3), "66.7");
        assert_eq!(percent_one_decimal(5, 5), "100.0");
        assert_eq!(percent_one_decimal(0, 0), "0.0");
    }

    #[test]
    fn empty_set_gives_zero_report() {
        let r = error_report(&[]);
        assert_eq!(r.total, ErrorRow::new(0, 0));
        assert_eq!(r.total.error_rate, 0.0);
    }

    proptest::proptest! {
        #[test]
        fn totals_are_row_sums(fc in 0u64..1_000_000, fe in 0u64..1_000_000, cc in 0u64..1_000_000, ce in 0u64..1_000_000) {
            let (fe, ce) = (fe.min(fc), ce.min(cc));
            let r = ErrorReport::from_counts((fc, fe), (cc, ce));
            proptest::prop_assert_eq!(r.total.count, r.factual.count + r.contrastive.count);
            proptest::prop_assert_eq!(r.total.error_count, r.factual.error_count + r.contrastive.error_count);
            for row in [&r.factual, &r.contrastive, &r.total] {
                proptest::prop_assert!((0.0..=100.0).contains(&row.error_rate));
                let shown: f64 = row.error_rate_display.parse().unwrap();
                proptest::prop_assert!((shown - row.error_rate).abs() <= 0.05 + 1e-9);
            }
        }
    }
}
