//! Rule-based sentence segmentation for discharge summaries.
//!
//! Boundaries are placed
//! * after terminal punctuation (`.`, `!`, `?`), together with any
//!   directly following terminals or closing brackets/quotes,
//! * at blank lines,
//! * before a line that opens a list item (`1.`, `2)`, `-`, `*`, `•`).
//!
//! A period glued to an abbreviation (`Dr.`, `e.g.`) or to a dotted token
//! such as `p.o.` does not end a sentence. Plain line breaks never do.

use alloc::string::String;
use alloc::vec::Vec;

use super::tokenize::tokenize_spans;
use super::ClinicalDocument;

const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "etc", "approx", "no", "pt", "pts",
    "hx", "fig", "min", "max", "inc", "dept", "jan", "feb", "mar", "apr", "jun", "jul", "aug",
    "sep", "sept", "oct", "nov", "dec",
];

/// A token of a document with its 1-based line and inclusive char span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocToken {
    pub text: String,
    pub line: usize,
    pub start: usize,
    pub end: usize,
}

/// One segmented sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub index: usize,
    /// First and last 1-based line touched by the sentence.
    pub line_span: (usize, usize),
    pub tokens: Vec<DocToken>,
}

impl Sentence {
    pub fn token_texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }
}

fn is_terminal(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

fn is_closer(token: &str) -> bool {
    matches!(token, ")" | "]" | "}" | "\"" | "'")
}

fn is_list_marker(first: &[DocToken]) -> bool {
    match first {
        [a, ..] if matches!(a.text.as_str(), "-" | "*" | "•" | "+") => true,
        [num, punct, ..] => {
            num.text.bytes().all(|b| b.is_ascii_digit())
                && matches!(punct.text.as_str(), "." | ")")
                && punct.start == num.end + 1
        }
        _ => false,
    }
}

struct Builder {
    sentences: Vec<Sentence>,
    current: Vec<DocToken>,
    pending_close: bool,
}

impl Builder {
    fn close(&mut self) {
        self.pending_close = false;
        if self.current.is_empty() {
            return;
        }
        let tokens = core::mem::take(&mut self.current);
        let line_span = (tokens[0].line, tokens[tokens.len() - 1].line);
        self.sentences.push(Sentence {
            index: self.sentences.len(),
            line_span,
            tokens,
        });
    }
}

/// Splits a document into sentences. Every token of the document lands in
/// exactly one sentence; output is deterministic. An empty or blank
/// document yields no sentences.
pub fn segment_sentences(doc: &ClinicalDocument) -> Vec<Sentence> {
    let mut b = Builder {
        sentences: Vec::new(),
        current: Vec::new(),
        pending_close: false,
    };
    for (idx, line) in doc.lines.iter().enumerate() {
        let tokens: Vec<DocToken> = tokenize_spans(line)
            .into_iter()
            .map(|s| DocToken {
                text: s.text,
                line: idx + 1,
                start: s.start,
                end: s.end,
            })
            .collect();
        if tokens.is_empty() {
            b.close();
            continue;
        }
        // list markers like `1.` neither split nor get guarded as terminals
        let marker_len = if is_list_marker(&tokens) {
            b.close();
            if tokens[0].text.bytes().all(|c| c.is_ascii_digit()) {
                2
            } else {
                1
            }
        } else {
            0
        };
        for (i, tok) in tokens.into_iter().enumerate() {
            if b.pending_close {
                let glued = b
                    .current
                    .last()
                    .is_some_and(|prev| prev.line == tok.line && prev.end + 1 == tok.start);
                if !(glued && (is_terminal(&tok.text) || is_closer(&tok.text))) {
                    b.close();
                }
            }
            let ends = i >= marker_len && is_terminal(&tok.text) && !guarded(&b.current, &tok);
            b.current.push(tok);
            if ends {
                b.pending_close = true;
            }
        }
    }
    b.close();
    b.sentences
}

fn guarded(current: &[DocToken], terminal: &DocToken) -> bool {
    if terminal.text != "." {
        return false;
    }
    let Some(prev) = current.last() else {
        return false;
    };
    if prev.line != terminal.line || prev.end + 1 != terminal.start {
        return false;
    }
    ABBREVIATIONS.contains(&prev.text.as_str())
        || (prev.text.contains('.') && prev.text.chars().any(char::is_alphabetic))
}
