//! Captioned-image corpora and the train/test leakage guard.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::io::{self, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub annotation_id: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: u64,
    pub file_name: String,
    pub split: Split,
    pub captions: Vec<Caption>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionMode {
    /// Only the caption with the smallest annotation id.
    #[default]
    First,
    All,
}

impl std::str::FromStr for CaptionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(CaptionMode::First),
            "all" => Ok(CaptionMode::All),
            other => Err(format!("unknown caption mode `{other}` (expected first|all)")),
        }
    }
}

/// Captions used for generation, in canonical (annotation id) order.
pub fn select_captions(record: &CaptionRecord, mode: CaptionMode) -> &[Caption] {
    match mode {
        CaptionMode::First => &record.captions[..1],
        CaptionMode::All => &record.captions,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: malformed COCO caption file: {source}")]
    Malformed {
        path: String,
        source: serde_json::Error,
    },
    #[error("annotation {annotation_id} references unknown image_id {image_id}")]
    UnknownImage { annotation_id: u64, image_id: u64 },
    #[error("duplicate image_id {0}")]
    DuplicateImage(u64),
    #[error("image {image_id}: duplicate annotation id {annotation_id}")]
    DuplicateAnnotation { image_id: u64, annotation_id: u64 },
    #[error("image {image_id}: invalid record: {reason}")]
    InvalidRecord { image_id: u64, reason: String },
    #[error("record {image_id} belongs to split {found}, expected {expected}")]
    SplitMismatch {
        image_id: u64,
        found: Split,
        expected: Split,
    },
}

/// All records of one split, sorted by image id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    split: Split,
    records: Vec<CaptionRecord>,
    source_digest: String,
}

impl CorpusSplit {
    /// Validates record invariants and sorts into canonical order.
    pub fn new(
        split: Split,
        mut records: Vec<CaptionRecord>,
        source_digest: String,
    ) -> Result<Self, CorpusError> {
        records.sort_by_key(|r| r.image_id);
        for pair in records.windows(2) {
            if pair[0].image_id == pair[1].image_id {
                return Err(CorpusError::DuplicateImage(pair[0].image_id));
            }
        }
        for r in &records {
            if r.split != split {
                return Err(CorpusError::SplitMismatch {
                    image_id: r.image_id,
                    found: r.split,
                    expected: split,
                });
            }
            if r.captions.is_empty() {
                return Err(CorpusError::InvalidRecord {
                    image_id: r.image_id,
                    reason: "no captions".into(),
                });
            }
            if r
                .captions
                .windows(2)
                .any(|w| w[0].annotation_id >= w[1].annotation_id)
            {
                return Err(CorpusError::InvalidRecord {
                    image_id: r.image_id,
                    reason: "annotation ids not strictly ascending".into(),
                });
            }
        }
        Ok(CorpusSplit {
            split,
            records,
            source_digest,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn records(&self) -> &[CaptionRecord] {
        &self.records
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_ids(&self) -> BTreeSet<u64> {
        self.records.iter().map(|r| r.image_id).collect()
    }

    pub fn get(&self, image_id: u64) -> Option<&CaptionRecord> {
        self.records
            .binary_search_by_key(&image_id, |r| r.image_id)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Canonical `corpus.jsonl` bytes.
    pub fn to_jsonl(&self) -> Vec<u8> {
        io::to_jsonl_bytes(&self.records)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        io::write_bytes_atomic(path, &self.to_jsonl())?;
        Ok(())
    }

    /// Loads a `corpus.jsonl` written by [`CorpusSplit::write_jsonl`].
    ///
    /// The split is taken from the records; an empty file yields `fallback`.
    pub fn read_jsonl(path: &Path, fallback: Split) -> Result<Self, CorpusError> {
        let records: Vec<CaptionRecord> = io::read_jsonl(path)?;
        let digest = io::sha256_file(path)?;
        let split = records.first().map(|r| r.split).unwrap_or(fallback);
        CorpusSplit::new(split, records, digest)
    }
}

#[derive(Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    caption: String,
}

/// Reads a COCO caption JSON file into one split.
///
/// Images without annotations are dropped; an annotation pointing at an
/// image not listed in `images` rejects the whole file.
pub fn load_coco_captions(path: &Path, split: Split) -> Result<CorpusSplit, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let digest = io::sha256_hex(&bytes);
    let coco: CocoFile = serde_json::from_slice(&bytes).map_err(|source| CorpusError::Malformed {
        path: path.display().to_string(),
        source,
    })?;

    let mut images: BTreeMap<u64, (String, Vec<Caption>)> = BTreeMap::new();
    for img in coco.images {
        if images.insert(img.id, (img.file_name, Vec::new())).is_some() {
            return Err(CorpusError::DuplicateImage(img.id));
        }
    }
    for ann in coco.annotations {
        let Some((_, caps)) = images.get_mut(&ann.image_id) else {
            return Err(CorpusError::UnknownImage {
                annotation_id: ann.id,
                image_id: ann.image_id,
            });
        };
        caps.push(Caption {
            annotation_id: ann.id,
            text: ann.caption,
        });
    }

    let mut dropped = 0usize;
    let mut records = Vec::with_capacity(images.len());
    for (image_id, (file_name, mut captions)) in images {
        if captions.is_empty() {
            dropped += 1;
            continue;
        }
        captions.sort_by_key(|c| c.annotation_id);
        if let Some(w) = captions
            .windows(2)
            .find(|w| w[0].annotation_id == w[1].annotation_id)
        {
            return Err(CorpusError::DuplicateAnnotation {
                image_id,
                annotation_id: w[0].annotation_id,
            });
        }
        records.push(CaptionRecord {
            image_id,
            file_name,
            split,
            captions,
        });
    }
    info!(
        path = %path.display(),
        records = records.len(),
        dropped_unannotated = dropped,
        "loaded caption corpus"
    );
    CorpusSplit::new(split, records, digest)
}

/// Image ids present in both the evaluation and the training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub overlapping_image_ids: Vec<u64>,
}

impl fmt::Display for LeakageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self
            .overlapping_image_ids
            .iter()
            .map(u64::to_string)
            .collect();
        write!(
            f,
            "data leakage: {} image(s) shared between evaluation and training splits: [{}]",
            ids.len(),
            ids.join(", ")
        )
    }
}

impl std::error::Error for LeakageReport {}

pub fn assert_disjoint(eval: &CorpusSplit, train: &CorpusSplit) -> Result<(), LeakageReport> {
    let eval_ids = eval.image_ids();
    let overlap: Vec<u64> = train
        .image_ids()
        .intersection(&eval_ids)
        .copied()
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(LeakageReport {
            overlapping_image_ids: overlap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture(name: &str) -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    fn record(image_id: u64, caps: &[(u64, &str)]) -> CaptionRecord {
        CaptionRecord {
            image_id,
            file_name: format!("{image_id}.jpg"),
            split: Split::Test,
            captions: caps
                .iter()
                .map(|&(annotation_id, text)| Caption {
                    annotation_id,
                    text: text.to_string(),
                })
                .collect(),
        }
    }

    fn split_of(ids: &[u64], split: Split) -> CorpusSplit {
        let records = ids
            .iter()
            .map(|&id| CaptionRecord {
                split,
                ..record(id, &[(1, "x")])
            })
            .collect();
        CorpusSplit::new(split, records, String::new()).unwrap()
    }

    #[test]
    fn empty_annotations_give_empty_split() {
        let split = load_coco_captions(&fixture("coco_empty.json"), Split::Test).unwrap();
        assert!(split.is_empty());
    }

    #[test]
    fn captions_grouped_and_sorted() {
        let split = load_coco_captions(&fixture("coco_small.json"), Split::Test).unwrap();
        assert_eq!(split.len(), 2);
        let seven = split.get(7).unwrap();
        let ids: Vec<u64> = seven.captions.iter().map(|c| c.annotation_id).collect();
        assert_eq!(ids, vec![1, 3]);
        assert_eq!(seven.captions[0].text, "first");
        assert_eq!(split.get(9).unwrap().captions.len(), 1);
    }

    #[test]
    fn orphan_annotation_rejected_with_id() {
        let err = load_coco_captions(&fixture("coco_orphan.json"), Split::Test).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownImage { image_id: 42, .. }), "{err}");
        assert!(err.to_string().contains("42"));
    }

    #[test]
    fn missing_and_malformed_files() {
        let err = load_coco_captions(Path::new("/nonexistent/x.json"), Split::Test).unwrap_err();
        assert!(matches!(err, CorpusError::Io(_)));
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{\"images\": [").unwrap();
        let err = load_coco_captions(&bad, Split::Test).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { .. }));
    }

    #[test]
    fn unannotated_images_dropped() {
        let split = load_coco_captions(&fixture("coco_test_20.json"), Split::Test).unwrap();
        assert_eq!(split.len(), 20);
        assert!(split.get(99999).is_none());
    }

    #[test]
    fn jsonl_round_trip_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let a = load_coco_captions(&fixture("coco_test_20.json"), Split::Test).unwrap();
        let b = load_coco_captions(&fixture("coco_test_20.json"), Split::Test).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let path = dir.path().join("corpus.jsonl");
        a.write_jsonl(&path).unwrap();
        let back = CorpusSplit::read_jsonl(&path, Split::Train).unwrap();
        assert_eq!(back.records(), a.records());
        assert_eq!(back.split(), Split::Test);
        let first = std::str::from_utf8(&a.to_jsonl()).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("{\"image_id\":1000,\"file_name\":"), "{first}");
        assert!(first.contains("\"split\":\"test\",\"captions\":[{\"annotation_id\":"));
    }

    #[test]
    fn select_modes() {
        let r = record(1, &[(1, "a"), (3, "b")]);
        let texts = |m| {
            select_captions(&r, m)
                .iter()
                .map(|c| c.text.as_str())
                .collect::<Vec<_>>()
        };
        assert_eq!(texts(CaptionMode::First), vec!["a"]);
        assert_eq!(texts(CaptionMode::All), vec!["a", "b"]);
        let single = record(2, &[(5, "only")]);
        assert_eq!(select_captions(&single, CaptionMode::First), select_captions(&single, CaptionMode::All));
    }

    #[test]
    fn invariant_violations_rejected() {
        let dup = vec![record(1, &[(1, "a")]), record(1, &[(2, "b")])];
        assert!(matches!(
            CorpusSplit::new(Split::Test, dup, String::new()),
            Err(CorpusError::DuplicateImage(1))
        ));
        let unordered = vec![record(1, &[(3, "a"), (2, "b")])];
        assert!(CorpusSplit::new(Split::Test, unordered, String::new()).is_err());
        let wrong_split = vec![record(1, &[(1, "a")])];
        assert!(matches!(
            CorpusSplit::new(Split::Train, wrong_split, String::new()),
            Err(CorpusError::SplitMismatch { .. })
        ));
    }

    #[test]
    fn disjoint_examples() {
        let ok = assert_disjoint(&split_of(&[1, 2], Split::Test), &split_of(&[3, 4], Split::Train));
        assert!(ok.is_ok());
        let err = assert_disjoint(&split_of(&[1, 2], Split::Test), &split_of(&[2, 3], Split::Train))
            .unwrap_err();
        assert_eq!(err.overlapping_image_ids, vec![2]);
        assert!(err.to_string().contains("[2]"));
        assert!(assert_disjoint(&split_of(&[], Split::Test), &split_of(&[1, 2], Split::Train)).is_ok());
    }

    proptest! {
        #[test]
        fn disjoint_is_symmetric(
            a in proptest::collection::btree_set(0u64..40, 0..15),
            b in proptest::collection::btree_set(0u64..40, 0..15),
        ) {
            let a: Vec<u64> = a.into_iter().collect();
            let b: Vec<u64> = b.into_iter().collect();
            let ab = assert_disjoint(&split_of(&a, Split::Test), &split_of(&b, Split::Train));
            let ba = assert_disjoint(&split_of(&b, Split::Test), &split_of(&a, Split::Train));
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn first_is_prefix_of_all(n in 1usize..6, start in 0u64..100) {
            let caps: Vec<(u64, String)> = (0..n as u64).map(|i| (start + 2 * i, format!("c{i}"))).collect();
            let r = CaptionRecord {
                image_id: 1,
                file_name: "f".into(),
                split: Split::Test,
                captions: caps.into_iter().map(|(annotation_id, text)| Caption { annotation_id, text }).collect(),
            };
            let first = select_captions(&r, CaptionMode::First);
            let all = select_captions(&r, CaptionMode::All);
            prop_assert_eq!(first.len(), 1);
            prop_assert!(all.starts_with(first));
        }
    }
}
