//! Multiclass confusion tallies and precision/recall/F1 aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::GapVerdict;

/// Per-class true-positive / false-positive / false-negative counts for a
/// single-label task.
///
/// Tallies form a commutative monoid under [`ConfusionTally::merge`], so
/// shards evaluated in parallel fold to the same totals as a sequential
/// pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTally {
    counts: BTreeMap<String, ClassCounts>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
struct ClassCounts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

/// A precision/recall/F1 triple. Every ratio uses the 0/0 = 0 convention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn prf_from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

impl ConfusionTally {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one observation. A correct prediction counts a true positive
    /// for its class; a wrong one counts a false negative for the gold class
    /// and a false positive for the predicted class.
    pub fn record(&mut self, gold: &str, predicted: &str) {
        if gold == predicted {
            self.counts.entry(gold.to_string()).or_default().tp += 1;
        } else {
            self.counts.entry(gold.to_string()).or_default().fn_ += 1;
            self.counts.entry(predicted.to_string()).or_default().fp += 1;
        }
    }

    /// Record a gold label whose prediction was unusable (parse failure,
    /// transport error). The gold class gains a false negative and no class
    /// gains a false positive.
    pub fn record_miss(&mut self, gold: &str) {
        self.counts.entry(gold.to_string()).or_default().fn_ += 1;
    }

    /// Make a class visible in reports even with zero observations.
    pub fn declare_class(&mut self, class: &str) {
        self.counts.entry(class.to_string()).or_default();
    }

    pub fn merge(&mut self, other: &ConfusionTally) {
        for (class, counts) in &other.counts {
            let slot = self.counts.entry(class.clone()).or_default();
            slot.tp += counts.tp;
            slot.fp += counts.fp;
            slot.fn_ += counts.fn_;
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Gold occurrences per class (tp + fn).
    pub fn support(&self, class: &str) -> u64 {
        self.counts
            .get(class)
            .map(|c| c.tp + c.fn_)
            .unwrap_or(0)
    }

    pub fn per_class(&self) -> BTreeMap<String, Prf> {
        self.counts
            .iter()
            .map(|(class, c)| (class.clone(), prf_from_counts(c.tp, c.fp, c.fn_)))
            .collect()
    }

    /// Micro-averaged P/R/F1: counts are pooled across classes before the
    /// ratios are taken. Classes in `exclude` contribute nothing.
    pub fn micro(&self, exclude: &BTreeSet<String>) -> Prf {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (class, c) in &self.counts {
            if exclude.contains(class) {
                continue;
            }
            tp += c.tp;
            fp += c.fp;
            fn_ += c.fn_;
        }
        prf_from_counts(tp, fp, fn_)
    }

    /// Macro-averaged P/R/F1: the arithmetic mean of per-class scores.
    pub fn macro_avg(&self, exclude: &BTreeSet<String>) -> Prf {
        let scores: Vec<Prf> = self
            .counts
            .iter()
            .filter(|(class, _)| !exclude.contains(*class))
            .map(|(_, c)| prf_from_counts(c.tp, c.fp, c.fn_))
            .collect();
        if scores.is_empty() {
            return Prf::default();
        }
        let n = scores.len() as f64;
        Prf {
            precision: scores.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: scores.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: scores.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

/// Per-index verdict scores plus pooled and averaged summaries.
///
/// `skipped` counts pairs whose prediction never produced a verdict; they
/// appear as false negatives for their gold class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    /// Keyed by class label: `-1` for complete, otherwise the index.
    pub per_class: BTreeMap<i64, Prf>,
    pub support: BTreeMap<i64, u64>,
    pub micro: Prf,
    pub macro_avg: Prf,
    pub pairs: usize,
    pub skipped: usize,
}

/// Score verdict predictions against gold. `None` predictions are counted
/// as skipped. Every distinct verdict value seen on either side becomes a
/// class.
pub fn verdict_report(pairs: &[(GapVerdict, Option<GapVerdict>)]) -> VerdictReport {
    let mut tally = ConfusionTally::new();
    let mut skipped = 0usize;
    for (gold, predicted) in pairs {
        match predicted {
            Some(p) => tally.record(
                &gold.class_label().to_string(),
                &p.class_label().to_string(),
            ),
            None => {
                skipped += 1;
                tally.record_miss(&gold.class_label().to_string());
            }
        }
    }
    let parse_class = |s: &str| -> i64 { s.parse().expect("verdict classes are integers") };
    let per_class: BTreeMap<i64, Prf> = tally
        .per_class()
        .into_iter()
        .map(|(class, prf)| (parse_class(&class), prf))
        .collect();
    let support = per_class
        .keys()
        .map(|&class| (class, tally.support(&class.to_string())))
        .collect();
    let none = BTreeSet::new();
    VerdictReport {
        micro: tally.micro(&none),
        macro_avg: tally.macro_avg(&none),
        per_class,
        support,
        pairs: pairs.len(),
        skipped,
    }
}
