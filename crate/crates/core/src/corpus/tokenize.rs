//! Deterministic rule-based tokenizer shared by every pipeline stage.
//!
//! Text is split on whitespace; leading and trailing punctuation of each
//! chunk is peeled off one character per token, while punctuation between
//! alphanumerics stays attached (`0.5`, `p.o`, `20mg`, `as-needed`).
//! Every token is lowercased.

use alloc::string::String;
use alloc::vec::Vec;

/// A token with its character span on one line (`end` inclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Tokenizes a single line, reporting 0-based character offsets.
pub fn tokenize_spans(line: &str) -> Vec<Span> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, chunk_start, i, &mut out);
    }
    out
}

fn split_chunk(chars: &[char], start: usize, end: usize, out: &mut Vec<Span>) {
    let mut lo = start;
    let mut hi = end;
    while lo < hi && !is_word_char(chars[lo]) {
        out.push(single(chars[lo], lo));
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && !is_word_char(chars[hi - 1]) {
        hi -= 1;
        trailing.push(single(chars[hi], hi));
    }
    if lo < hi {
        let text: String = chars[lo..hi].iter().collect();
        out.push(Span {
            text: text.to_lowercase(),
            start: lo,
            end: hi - 1,
        });
    }
    out.extend(trailing.into_iter().rev());
}

fn single(c: char, at: usize) -> Span {
    let mut text = String::new();
    text.push(c);
    Span {
        text: text.to_lowercase(),
        start: at,
        end: at,
    }
}

/// Tokenizes free text (any number of lines) into lowercase tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.lines()
        .flat_map(|line| tokenize_spans(line).into_iter().map(|s| s.text))
        .collect()
}
