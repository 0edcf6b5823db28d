//! Clinical documents, medication annotations and their conversion into
//! unaligned sentence/frame pairs.

mod align;
mod annotation;
pub mod frame;
mod segment;
pub mod tokenize;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use align::align_events_to_sentences;
pub use annotation::parse_annotation_file;
pub use frame::{
    is_protected_token, linearize_frame, parse_linearized, parse_linearized_lenient, FrameError,
    SlotFrame, SlotLabel,
};
pub use segment::{segment_sentences, Sentence};
pub use tokenize::{tokenize, tokenize_spans, Span};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("annotation line {line_no}: {reason}")]
    MalformedEntry { line_no: usize, reason: String },
    #[error("annotation line {line_no}: `{label}` starts at {start} after it ends at {end}")]
    OffsetOrder {
        line_no: usize,
        label: SlotLabel,
        start: Position,
        end: Position,
    },
    #[error("`{label}` offset {position} is outside document `{doc_id}`")]
    OffsetOutOfRange {
        doc_id: String,
        label: SlotLabel,
        position: Position,
    },
}

/// A `line:char` location in a document; lines are 1-based, characters
/// 0-based. Ordering is lexicographic on `(line, char)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub line: usize,
    pub char: usize,
}

impl Position {
    pub fn new(line: usize, char: usize) -> Self {
        Self { line, char }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.char)
    }
}

/// One annotated slot of a medication event. `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventEntry {
    pub label: SlotLabel,
    pub value: String,
    pub start: Position,
    pub end: Position,
}

/// All slots annotated for one medication mention.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MedicationEvent {
    pub entries: Vec<EventEntry>,
}

/// A raw document; lines are kept byte-exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinicalDocument {
    pub doc_id: String,
    pub lines: Vec<String>,
}

impl ClinicalDocument {
    pub fn new(doc_id: impl Into<String>, lines: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            lines,
        }
    }

    /// Splits `text` on `\n` (a trailing `\r` is kept as part of the line).
    pub fn from_text(doc_id: impl Into<String>, text: &str) -> Self {
        let mut lines: Vec<String> = text.split('\n').map(String::from).collect();
        if text.ends_with('\n') {
            lines.pop();
        }
        Self::new(doc_id, lines)
    }
}

/// The atomic training and evaluation unit: a tokenized sentence and the
/// unaligned frame describing its medication content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub doc_id: String,
    pub sentence_index: usize,
    pub source_tokens: Vec<String>,
    pub target: SlotFrame,
}
