//! Distant supervision: pairing structured prescription rows with the note
//! sentence of the same patient that best describes them.
//!
//! Each record field that appears in a sentence (case-insensitive, as a
//! contiguous token sequence, with route/frequency/form synonyms) earns one
//! point. A record keeps its best sentence when the score reaches the
//! acceptance threshold.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::corpus::{tokenize, SentencePair, SlotFrame, SlotLabel};

/// The bundled, versioned synonym table.
pub const BUILTIN_SYNONYMS: &str = include_str!("../data/synonyms-v1.tsv");
const SYNONYMS_HEADER: &str = "#synonyms-v1";

pub const DEFAULT_MIN_SCORE: usize = 2;
pub const DEFAULT_MAX_SRC_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("synonym table: {0}")]
    Synonyms(String),
    #[error("prescription record has an empty `{0}`")]
    EmptyField(&'static str),
}

/// One row of the prescription table.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct PrescriptionRecord {
    pub patient_id: String,
    pub drug: String,
    pub dose_value: String,
    pub dose_unit: String,
    pub form: String,
    pub route: String,
    pub frequency: String,
}

impl PrescriptionRecord {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.patient_id.trim().is_empty() {
            return Err(MatchError::EmptyField("patient_id"));
        }
        if self.drug.trim().is_empty() {
            return Err(MatchError::EmptyField("drug"));
        }
        Ok(())
    }
}

/// Scored record fields. Dose value and unit count as one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchField {
    Drug,
    Dose,
    Form,
    Route,
    Frequency,
}

impl MatchField {
    pub const ALL: [MatchField; 5] = [
        MatchField::Drug,
        MatchField::Dose,
        MatchField::Form,
        MatchField::Route,
        MatchField::Frequency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MatchField::Drug => "drug",
            MatchField::Dose => "dose",
            MatchField::Form => "form",
            MatchField::Route => "route",
            MatchField::Frequency => "frequency",
        }
    }

    /// Slot receiving this field in a distantly supervised frame.
    pub fn slot(self) -> Option<SlotLabel> {
        match self {
            MatchField::Drug => Some(SlotLabel::Name),
            MatchField::Dose => Some(SlotLabel::Dose),
            MatchField::Route => Some(SlotLabel::Mode),
            MatchField::Frequency => Some(SlotLabel::Frequency),
            MatchField::Form => None,
        }
    }
}

impl fmt::Display for MatchField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Groups of interchangeable phrases, per field, stored tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymTable {
    groups: BTreeMap<MatchField, Vec<Vec<Vec<String>>>>,
}

impl SynonymTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_SYNONYMS).expect("bundled synonym table is well-formed")
    }

    pub fn empty() -> Self {
        Self {
            groups: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, MatchError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SYNONYMS_HEADER) {
            return Err(MatchError::Synonyms("missing `#synonyms-v1` header".into()));
        }
        let mut groups: BTreeMap<MatchField, Vec<Vec<Vec<String>>>> = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (field, phrases) = line.split_once('\t').ok_or_else(|| {
                MatchError::Synonyms(alloc::format!(
                    "line {}: expected `<field>\\t<phrases>`",
                    i + 2
                ))
            })?;
            let field = match field.trim() {
                "route" => MatchField::Route,
                "frequency" => MatchField::Frequency,
                "form" => MatchField::Form,
                other => {
                    return Err(MatchError::Synonyms(alloc::format!(
                        "line {}: unsupported field `{other}`",
                        i + 2
                    )))
                }
            };
            let group: Vec<Vec<String>> = phrases
                .split('|')
                .map(tokenize)
                .filter(|p| !p.is_empty())
                .collect();
            groups.entry(field).or_default().push(group);
        }
        Ok(Self { groups })
    }

    /// All phrase variants equivalent to `value` for `field`, the value
    /// itself first.
    fn variants(&self, field: MatchField, value: &[String]) -> Vec<Vec<String>> {
        let mut out = alloc::vec![value.to_vec()];
        if let Some(groups) = self.groups.get(&field) {
            for group in groups.iter().filter(|g| g.iter().any(|p| p == value)) {
                out.extend(group.iter().filter(|p| *p != value).cloned());
            }
        }
        out
    }
}

fn contains_seq(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn normalize_sentence<S: AsRef<str>>(sentence: &[S]) -> Vec<String> {
    sentence.iter().flat_map(|t| tokenize(t.as_ref())).collect()
}

/// Token patterns for a record field; empty when the field is blank.
fn field_patterns(
    record: &PrescriptionRecord,
    field: MatchField,
    synonyms: &SynonymTable,
) -> Vec<Vec<String>> {
    let base = |text: &str| tokenize(text);
    match field {
        MatchField::Drug => alloc::vec![base(&record.drug)],
        MatchField::Dose => {
            let value = base(&record.dose_value);
            let unit = base(&record.dose_unit);
            if value.is_empty() {
                return Vec::new();
            }
            if unit.is_empty() {
                return alloc::vec![value];
            }
            let spaced: Vec<String> = value.iter().chain(unit.iter()).cloned().collect();
            let mut glued_text = record.dose_value.trim().to_string();
            glued_text.push_str(record.dose_unit.trim());
            alloc::vec![spaced, base(&glued_text)]
        }
        MatchField::Form | MatchField::Route | MatchField::Frequency => {
            let raw = match field {
                MatchField::Form => &record.form,
                MatchField::Route => &record.route,
                _ => &record.frequency,
            };
            let value = base(raw);
            if value.is_empty() {
                return Vec::new();
            }
            synonyms.variants(field, &value)
        }
    }
}

/// Scores one sentence against a record: one point per matching field.
pub fn score_sentence<S: AsRef<str>>(
    record: &PrescriptionRecord,
    sentence: &[S],
    synonyms: &SynonymTable,
) -> (usize, BTreeSet<MatchField>) {
    let tokens = normalize_sentence(sentence);
    let matched: BTreeSet<MatchField> = MatchField::ALL
        .into_iter()
        .filter(|&f| {
            field_patterns(record, f, synonyms)
                .iter()
                .any(|p| contains_seq(&tokens, p))
        })
        .collect();
    (matched.len(), matched)
}

/// A record paired with its best sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub record: PrescriptionRecord,
    pub sentence_index: usize,
    pub sentence: Vec<String>,
    pub score: usize,
    pub matched_fields: BTreeSet<MatchField>,
}

/// Picks, for every record, its highest-scoring sentence (earliest on
/// ties) and keeps it when the score reaches `min_score`.
pub fn match_patient<S: AsRef<str>>(
    records: &[PrescriptionRecord],
    sentences: &[Vec<S>],
    min_score: usize,
    synonyms: &SynonymTable,
) -> Vec<MatchResult> {
    let min_score = min_score.max(1);
    let mut out = Vec::new();
    for record in records {
        let mut best: Option<(usize, usize, BTreeSet<MatchField>)> = None;
        for (i, sentence) in sentences.iter().enumerate() {
            let (score, fields) = score_sentence(record, sentence, synonyms);
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, i, fields));
            }
        }
        if let Some((score, i, matched_fields)) = best {
            if score >= min_score {
                out.push(MatchResult {
                    record: record.clone(),
                    sentence_index: i,
                    sentence: sentences[i]
                        .iter()
                        .map(|t| t.as_ref().to_string())
                        .collect(),
                    score,
                    matched_fields,
                });
            }
        }
    }
    out
}

/// Frame built from the slot-bearing fields a record matched.
pub fn frame_from_match(result: &MatchResult) -> SlotFrame {
    let r = &result.record;
    let mut frame = SlotFrame::new();
    for field in &result.matched_fields {
        let Some(label) = field.slot() else { continue };
        let text = match field {
            MatchField::Drug => tokenize(&r.drug).join(" "),
            MatchField::Dose => {
                let mut t = tokenize(&r.dose_value);
                t.extend(tokenize(&r.dose_unit));
                t.join(" ")
            }
            MatchField::Route => tokenize(&r.route).join(" "),
            MatchField::Frequency => tokenize(&r.frequency).join(" "),
            MatchField::Form => continue,
        };
        // matched fields are never blank
        let _ = frame.insert(label, &text);
    }
    frame
}

/// Drops sentences longer than `max_src_len` tokens and, when `dedup` is
/// set, repeated `(sentence, frame)` pairs; converts survivors to pairs.
pub fn filter_corpus(
    results: &[MatchResult],
    max_src_len: usize,
    dedup: bool,
) -> Vec<SentencePair> {
    let mut seen: BTreeSet<(Vec<String>, SlotFrame)> = BTreeSet::new();
    let mut out = Vec::new();
    for result in results {
        if result.sentence.len() > max_src_len {
            continue;
        }
        let source_tokens = normalize_sentence(&result.sentence);
        let frame = frame_from_match(result);
        if dedup && !seen.insert((source_tokens.clone(), frame.clone())) {
            continue;
        }
        out.push(SentencePair {
            doc_id: result.record.patient_id.clone(),
            sentence_index: result.sentence_index,
            source_tokens,
            target: frame,
        });
    }
    out
}
