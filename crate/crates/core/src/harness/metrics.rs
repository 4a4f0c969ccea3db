//! Confusion counts and the five classification metrics.
//!
//! The positive class is gold `Yes`. An unparseable reply is neither a
//! positive nor a negative prediction: it counts against recall (gold `Yes`)
//! or specificity (gold `No`) and against accuracy, but never as a false
//! positive, so precision stays the accuracy of positive predictions.

use std::collections::{BTreeMap, HashMap};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use super::{Label, ModelAnswer};
use crate::promptgen::{Answer, Category, QAPair};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub unparseable_pos: u64,
    pub unparseable_neg: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, gold: Answer, predicted: Label) {
        match (gold, predicted) {
            (Answer::Yes, Label::Yes) => self.tp += 1,
            (Answer::Yes, Label::No) => self.fn_ += 1,
            (Answer::Yes, Label::Unparseable) => self.unparseable_pos += 1,
            (Answer::No, Label::Yes) => self.fp += 1,
            (Answer::No, Label::No) => self.tn += 1,
            (Answer::No, Label::Unparseable) => self.unparseable_neg += 1,
        }
    }

    /// Number of gold-`Yes` items.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_ + self.unparseable_pos
    }

    /// Number of gold-`No` items.
    pub fn negatives(&self) -> u64 {
        self.tn + self.fp + self.unparseable_neg
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn unparseable(&self) -> u64 {
        self.unparseable_pos + self.unparseable_neg
    }
}

/// A metric value, or `Undefined` when its denominator is zero.
///
/// Serialized as a bare number or the string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric<T> {
    Defined(T),
    Undefined,
}

impl<T> Metric<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Metric::Defined(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Metric::Defined(_))
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Metric<U> {
        match self {
            Metric::Defined(v) => Metric::Defined(f(v)),
            Metric::Undefined => Metric::Undefined,
        }
    }
}

impl<T: Scalar> Metric<T> {
    pub fn ratio(numerator: u64, denominator: u64) -> Self {
        if denominator == 0 {
            Metric::Undefined
        } else {
            Metric::Defined(T::from_count(numerator) / T::from_count(denominator))
        }
    }

    pub fn to_f64(&self) -> Option<f64> {
        self.value().map(Scalar::to_f64)
    }
}

impl<T: Serialize> Serialize for Metric<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Metric::Defined(v) => v.serialize(serializer),
            Metric::Undefined => serializer.serialize_str("undefined"),
        }
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Metric<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr<T> {
            Value(T),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Value(v) => Ok(Metric::Defined(v)),
            Repr::Text(s) if s == "undefined" => Ok(Metric::Undefined),
            Repr::Text(s) => Err(de::Error::custom(format!("expected a number or \"undefined\", got {s:?}"))),
        }
    }
}

/// Harmonic mean of precision and recall; undefined when `P + R = 0`.
pub fn f1_score<T: Scalar>(precision: &T, recall: &T) -> Metric<T> {
    let sum = precision.clone() + recall.clone();
    if sum.is_zero() {
        return Metric::Undefined;
    }
    Metric::Defined(T::two() * precision.clone() * recall.clone() / sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub precision: Metric<T>,
    pub recall: Metric<T>,
    pub specificity: Metric<T>,
    pub f1: Metric<T>,
    pub accuracy: Metric<T>,
    pub counts: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_category: BTreeMap<Category, MetricsReport<T>>,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn from_counts(counts: ConfusionMatrix) -> Self {
        let precision = Metric::ratio(counts.tp, counts.tp + counts.fp);
        let recall = Metric::ratio(counts.tp, counts.positives());
        let specificity = Metric::ratio(counts.tn, counts.negatives());
        let accuracy = Metric::ratio(counts.tp + counts.tn, counts.total());
        let f1 = match (precision.value(), recall.value()) {
            (Some(p), Some(r)) => f1_score(p, r),
            _ => Metric::Undefined,
        };
        MetricsReport {
            precision,
            recall,
            specificity,
            f1,
            accuracy,
            counts,
            per_category: BTreeMap::new(),
        }
    }

    /// Same report in another scalar type, recomputed from the counts.
    pub fn recompute<U: Scalar>(&self) -> MetricsReport<U> {
        let mut out = MetricsReport::from_counts(self.counts);
        out.per_category = self
            .per_category
            .iter()
            .map(|(k, v)| (*k, v.recompute()))
            .collect();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    #[error("no answer for qa_id {0}")]
    MissingAnswer(String),
    #[error("duplicate answer for qa_id {0}")]
    DuplicateAnswer(String),
    #[error("answer for qa_id {0} has no matching pair")]
    UnknownAnswer(String),
    #[error("duplicate pair qa_id {0}")]
    DuplicatePair(String),
}

/// Scores `answers` against the gold labels of `pairs`, overall and per
/// category. The answers must cover exactly the pairs' qa_ids.
pub fn score<T: Scalar>(pairs: &[QAPair], answers: &[ModelAnswer]) -> Result<MetricsReport<T>, ScoreError> {
    let mut by_id: HashMap<&str, &ModelAnswer> = HashMap::with_capacity(answers.len());
    for a in answers {
        if by_id.insert(a.qa_id.as_str(), a).is_some() {
            return Err(ScoreError::DuplicateAnswer(a.qa_id.clone()));
        }
    }
    let mut overall = ConfusionMatrix::default();
    let mut per_category: BTreeMap<Category, ConfusionMatrix> = BTreeMap::new();
    let mut seen = std::collections::HashSet::with_capacity(pairs.len());
    for pair in pairs {
        if !seen.insert(pair.qa_id.as_str()) {
            return Err(ScoreError::DuplicatePair(pair.qa_id.clone()));
        }
        let answer = by_id
            .get(pair.qa_id.as_str())
            .ok_or_else(|| ScoreError::MissingAnswer(pair.qa_id.clone()))?;
        overall.record(pair.gold_answer, answer.normalized);
        per_category
            .entry(pair.category)
            .or_default()
            .record(pair.gold_answer, answer.normalized);
    }
    if let Some(extra) = answers.iter().find(|a| !seen.contains(a.qa_id.as_str())) {
        return Err(ScoreError::UnknownAnswer(extra.qa_id.clone()));
    }
    let mut report = MetricsReport::from_counts(overall);
    report.per_category = per_category
        .into_iter()
        .map(|(k, c)| (k, MetricsReport::from_counts(c)))
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptgen::{Polarity, Provenance};
    use num_rational::Ratio;
    use proptest::prelude::*;

    type Q = Ratio<i64>;

    fn pair(id: usize, polarity: Polarity, category: Category) -> QAPair {
        QAPair::new(
            id as u64,
            format!("Is there thing {id}?"),
            polarity,
            category,
            None,
            1,
            Provenance {
                backend_id: "stub".into(),
                cache_key: String::new(),
            },
        )
    }

    fn answer(p: &QAPair, label: Label) -> ModelAnswer {
        ModelAnswer {
            qa_id: p.qa_id.clone(),
            raw_text: label.to_string(),
            normalized: label,
            latency_ms: 0,
        }
    }

    #[test]
    fn six_item_hand_count() {
        let pairs: Vec<QAPair> = (0..6)
            .map(|i| pair(i, if i < 3 { Polarity::Factual } else { Polarity::Contrastive }, Category::Object))
            .collect();
        let preds = [Label::Yes, Label::Yes, Label::No, Label::Yes, Label::No, Label::No];
        let answers: Vec<ModelAnswer> = pairs.iter().zip(preds).map(|(p, l)| answer(p, l)).collect();
        let r: MetricsReport<Q> = score(&pairs, &answers).unwrap();
        assert_eq!(
            r.counts,
            ConfusionMatrix {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 2,
                unparseable_pos: 0,
                unparseable_neg: 0
            }
        );
        let two_thirds = Metric::Defined(Q::new(2, 3));
        for m in [r.precision, r.recall, r.specificity, r.f1, r.accuracy] {
            assert_eq!(m, two_thirds);
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        let pairs: Vec<QAPair> = (0..5)
            .map(|i| pair(i, if i % 2 == 0 { Polarity::Factual } else { Polarity::Contrastive }, Category::Attribute))
            .collect();
        let answers: Vec<ModelAnswer> = pairs
            .iter()
            .map(|p| answer(p, if p.gold_answer == Answer::Yes { Label::Yes } else { Label::No }))
            .collect();
        let r: MetricsReport<f64> = score(&pairs, &answers).unwrap();
        for m in [r.precision, r.recall, r.specificity, r.f1, r.accuracy] {
            assert_eq!(m, Metric::Defined(1.0));
        }
        assert_eq!(r.per_category.len(), 1);
    }

    #[test]
    fn llava_f1_composition() {
        let f1 = f1_score(&0.5542f64, &0.9559f64).value().copied().unwrap();
        assert!((f1 - 0.7016).abs() < 1e-4, "{f1}");
    }

    #[test]
    fn unparseable_is_not_a_false_positive() {
        let pairs = vec![pair(0, Polarity::Contrastive, Category::Object), pair(1, Polarity::Factual, Category::Object)];
        let answers = vec![answer(&pairs[0], Label::Unparseable), answer(&pairs[1], Label::Yes)];
        let r: MetricsReport<Q> = score(&pairs, &answers).unwrap();
        assert_eq!(r.counts.fp, 0);
        assert_eq!(r.precision, Metric::Defined(Q::from_integer(1)));
        assert_eq!(r.specificity, Metric::Defined(Q::from_integer(0)));
        assert_eq!(r.accuracy, Metric::Defined(Q::new(1, 2)));
    }

    #[test]
    fn degenerate_denominators_are_undefined() {
        let r: MetricsReport<f64> = MetricsReport::from_counts(ConfusionMatrix::default());
        for m in [r.precision, r.recall, r.specificity, r.f1, r.accuracy] {
            assert_eq!(m, Metric::Undefined);
        }
        let no_positive_predictions = MetricsReport::<f64>::from_counts(ConfusionMatrix {
            fn_: 2,
            tn: 3,
            ..Default::default()
        });
        assert_eq!(no_positive_predictions.precision, Metric::Undefined);
        assert_eq!(no_positive_predictions.f1, Metric::Undefined);
        assert_eq!(no_positive_predictions.recall, Metric::Defined(0.0));
        let zero_tp = MetricsReport::<f64>::from_counts(ConfusionMatrix {
            fp: 1,
            fn_: 1,
            ..Default::default()
        });
        assert_eq!(zero_tp.f1, Metric::Undefined);
    }

    #[test]
    fn answer_coverage_errors() {
        let pairs = vec![pair(0, Polarity::Factual, Category::Object), pair(1, Polarity::Factual, Category::Object)];
        let a0 = answer(&pairs[0], Label::Yes);
        assert!(matches!(score::<f64>(&pairs, std::slice::from_ref(&a0)), Err(ScoreError::MissingAnswer(_))));
        assert!(matches!(
            score::<f64>(&pairs, &[a0.clone(), a0.clone()]),
            Err(ScoreError::DuplicateAnswer(_))
        ));
        let stray = ModelAnswer {
            qa_id: "nope".into(),
            ..a0.clone()
        };
        assert!(matches!(
            score::<f64>(&pairs, &[a0, answer(&pairs[1], Label::No), stray]),
            Err(ScoreError::UnknownAnswer(_))
        ));
    }

    #[test]
    fn metric_json_shape() {
        let r: MetricsReport<f64> = MetricsReport::from_counts(ConfusionMatrix {
            tp: 1,
            tn: 0,
            fn_: 1,
            ..Default::default()
        });
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["specificity"], "undefined");
        assert_eq!(v["recall"], 0.5);
        assert_eq!(v["counts"]["fn_"], 1);
        let back: MetricsReport<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<Metric<f64>>("\"nan\"").is_err());
    }

    fn counts() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..50, 0u64..50, 0u64..50, 0u64..50, 0u64..5, 0u64..5).prop_map(|(tp, fp, fn_, tn, up, un)| ConfusionMatrix {
            tp,
            fp,
            fn_,
            tn,
            unparseable_pos: up,
            unparseable_neg: un,
        })
    }

    proptest! {
        #[test]
        fn f1_between_precision_and_recall(c in counts()) {
            let r = MetricsReport::<Q>::from_counts(c);
            if let (Some(p), Some(rc), Some(f)) = (r.precision.value(), r.recall.value(), r.f1.value()) {
                let (lo, hi) = if p < rc { (p, rc) } else { (rc, p) };
                prop_assert!(lo <= f && f <= hi);
            }
        }

        #[test]
        fn fp_to_tn_is_monotone(c in counts()) {
            prop_assume!(c.fp > 0);
            let before = MetricsReport::<Q>::from_counts(c);
            let after = MetricsReport::<Q>::from_counts(ConfusionMatrix { fp: c.fp - 1, tn: c.tn + 1, ..c });
            for (b, a) in [
                (before.specificity, after.specificity),
                (before.accuracy, after.accuracy),
            ] {
                prop_assert!(a.value().unwrap() >= b.value().unwrap());
            }
            if let Some(b) = before.precision.value() {
                match after.precision.value() {
                    Some(a) => prop_assert!(a >= b),
                    None => prop_assert_eq!(*b, Q::from_integer(0)),
                }
            }
        }

        #[test]
        fn float_agrees_with_exact(c in counts()) {
            let exact = MetricsReport::<Q>::from_counts(c);
            let float: MetricsReport<f64> = exact.recompute();
            for (e, f) in [
                (exact.precision, float.precision),
                (exact.recall, float.recall),
                (exact.specificity, float.specificity),
                (exact.f1, float.f1),
                (exact.accuracy, float.accuracy),
            ] {
                match (e.to_f64(), f.value()) {
                    (Some(e), Some(f)) => prop_assert!((e - f).abs() < 1e-12),
                    (None, None) => {}
                    other => prop_assert!(false, "definedness differs: {:?}", other),
                }
            }
        }
    }
}
