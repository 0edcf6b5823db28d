//! Per-slot precision, recall and F-measure over unaligned frames.
//!
//! Frames are compared per slot label as multisets of normalized values:
//! the multiset intersection counts as true positives, the remaining
//! predictions as false positives and the remaining references as false
//! negatives. Macro F1 averages the slots that have any support.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::corpus::{SentencePair, SlotFrame, SlotLabel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("predictions and references are not aligned: missing predictions for {missing:?}, unexpected predictions for {unexpected:?}")]
    Alignment {
        missing: Vec<(String, usize)>,
        unexpected: Vec<(String, usize)>,
    },
    #[error("duplicate sentence key ({0}, {1})")]
    DuplicateKey(String, usize),
}

/// Lowercases, collapses whitespace and strips surrounding punctuation.
pub fn normalize_value(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut s = lowered.as_str();
    loop {
        let trimmed = s
            .trim()
            .trim_matches(|c: char| !c.is_alphanumeric() && !c.is_whitespace());
        if trimmed.len() == s.len() {
            break;
        }
        s = trimmed;
    }
    crate::corpus::frame::collapse_whitespace(s)
}

/// Confusion counts of one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_positive)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Whether the slot occurred at all, predicted or referenced.
    pub fn has_support(&self) -> bool {
        self.true_positive + self.false_positive + self.false_negative > 0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-slot accumulator. Merging is associative, so partial scores over
/// disjoint sentence sets can be combined in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotScore {
    counts: [Counts; 6],
}

impl SlotScore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, label: SlotLabel) -> &Counts {
        &self.counts[label.index()]
    }

    pub fn get_mut(&mut self, label: SlotLabel) -> &mut Counts {
        &mut self.counts[label.index()]
    }

    pub fn merge(&mut self, other: &SlotScore) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            a.true_positive += b.true_positive;
            a.false_positive += b.false_positive;
            a.false_negative += b.false_negative;
        }
    }

    /// Per-slot F1, `None` for slots without support.
    pub fn supported_f1(&self) -> [Option<f64>; 6] {
        self.counts.map(|c| c.has_support().then(|| c.f1()))
    }

    pub fn macro_f1(&self) -> f64 {
        macro_f1(&self.supported_f1())
    }
}

/// Mean of the per-slot F1 values that are present. Zero when no slot has
/// support.
pub fn macro_f1(per_slot: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = per_slot.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Rounds to two decimals, halves away from zero (the table convention).
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    // absorb representation error like 0.125 * 100 = 12.499999...
    let nudged = scaled + scaled.signum() * 1e-9;
    libm::round(nudged) / 100.0
}

fn tally<'a>(values: impl Iterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for v in values {
        *m.entry(normalize_value(v)).or_insert(0) += 1;
    }
    m
}

/// Adds the comparison of one predicted frame against its reference.
pub fn score_pair(predicted: &SlotFrame, reference: &SlotFrame, scores: &mut SlotScore) {
    for label in SlotLabel::ALL {
        let pred = tally(predicted.values(label));
        let gold = tally(reference.values(label));
        let pred_total: u64 = pred.values().sum();
        let gold_total: u64 = gold.values().sum();
        let tp: u64 = pred
            .iter()
            .map(|(v, n)| (*n).min(gold.get(v).copied().unwrap_or(0)))
            .sum();
        let c = scores.get_mut(label);
        c.true_positive += tp;
        c.false_positive += pred_total - tp;
        c.false_negative += gold_total - tp;
    }
}

/// Result of evaluating a prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scores: SlotScore,
    pub pairs: usize,
}

impl EvalReport {
    pub fn macro_f1(&self) -> f64 {
        self.scores.macro_f1()
    }

    /// Aligned plain-text table with columns `F1 m do mo f du r`; slots
    /// without support print as `-`.
    pub fn render_table(&self, name: &str) -> String {
        let width = name.len().max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}  {:>5}", "model", "F1");
        for label in SlotLabel::ALL {
            let _ = write!(out, "  {:>5}", label.code());
        }
        out.push('\n');
        let _ = write!(out, "{:<width$}  {:>5.2}", name, round2(self.macro_f1()));
        for f1 in self.scores.supported_f1() {
            match f1 {
                Some(v) => {
                    let _ = write!(out, "  {:>5.2}", round2(v));
                }
                None => {
                    let _ = write!(out, "  {:>5}", "-");
                }
            }
        }
        out.push('\n');
        out
    }
}

fn keyed(pairs: &[SentencePair]) -> Result<BTreeMap<(String, usize), &SlotFrame>, EvalError> {
    let mut map = BTreeMap::new();
    for p in pairs {
        if map
            .insert((p.doc_id.clone(), p.sentence_index), &p.target)
            .is_some()
        {
            return Err(EvalError::DuplicateKey(p.doc_id.clone(), p.sentence_index));
        }
    }
    Ok(map)
}

/// Scores predictions against references, matched by
/// `(doc_id, sentence_index)`.
pub fn evaluate(
    predictions: &[SentencePair],
    references: &[SentencePair],
) -> Result<EvalReport, EvalError> {
    let pred = keyed(predictions)?;
    let gold = keyed(references)?;
    let missing: Vec<_> = gold
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .cloned()
        .collect();
    let unexpected: Vec<_> = pred
        .keys()
        .filter(|k| !gold.contains_key(*k))
        .cloned()
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(EvalError::Alignment {
            missing,
            unexpected,
        });
    }
    let mut scores = SlotScore::new();
    for (key, reference) in &gold {
        score_pair(pred[key], reference, &mut scores);
    }
    Ok(EvalReport {
        scores,
        pairs: gold.len(),
    })
}
