//! Byte pair encoding: greedy merge learning and reversible segmentation.
//!
//! Words are split into characters with an end-of-word marker glued to the
//! last one (`l o w</w>`). Learning repeatedly merges the most frequent
//! adjacent pair, breaking frequency ties by the lexicographically smallest
//! `(left, right)`. Encoded output marks every non-final piece of a word
//! with the joiner `@@` (`lo@@ w`), which [`decode`] strips again.
//!
//! Slot-label and separator tokens of linearized frames, and escaped value
//! tokens, are protected and pass through unsplit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::is_protected_token;

pub const END_OF_WORD: &str = "</w>";
pub const JOINER: &str = "@@";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BpeError {
    #[error("subword sequence ends inside a word (`{0}` carries a joiner)")]
    DanglingJoiner(String),
    #[error("merge #{index} `{left} {right}` is listed twice")]
    DuplicateMerge {
        index: usize,
        left: String,
        right: String,
    },
}

/// A learned, immutable merge table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    vocab: BTreeSet<String>,
    ranks: BTreeMap<(String, String), usize>,
}

impl BpeModel {
    /// Rebuilds a model from an ordered merge list (e.g. a codes file).
    /// The vocabulary is the set of symbols named by the merges plus their
    /// products.
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self, BpeError> {
        let mut vocab = BTreeSet::new();
        for (left, right) in &merges {
            vocab.insert(left.clone());
            vocab.insert(right.clone());
            vocab.insert(concat(left, right));
        }
        Self::with_vocab(merges, vocab)
    }

    fn with_vocab(
        merges: Vec<(String, String)>,
        vocab: BTreeSet<String>,
    ) -> Result<Self, BpeError> {
        let mut ranks = BTreeMap::new();
        for (index, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), index).is_some() {
                return Err(BpeError::DuplicateMerge {
                    index,
                    left: pair.0.clone(),
                    right: pair.1.clone(),
                });
            }
        }
        Ok(Self {
            merges,
            vocab,
            ranks,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn eow(&self) -> &'static str {
        END_OF_WORD
    }

    fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_pair(&symbols, left, right);
        }
        symbols
    }
}

fn concat(left: &str, right: &str) -> String {
    let mut s = String::with_capacity(left.len() + right.len());
    s.push_str(left);
    s.push_str(right);
    s
}

fn initial_symbols(word: &str) -> Vec<String> {
    let n = word.chars().count();
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            let mut s = c.to_string();
            if i + 1 == n {
                s.push_str(END_OF_WORD);
            }
            s
        })
        .collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(concat(left, right));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges from word frequencies. Stops early once
/// no adjacent pair occurs at least twice. Empty words are ignored.
pub fn learn_bpe(word_counts: &BTreeMap<String, u64>, num_merges: usize) -> BpeModel {
    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .iter()
        .filter(|(w, &c)| !w.is_empty() && c > 0)
        .map(|(w, &c)| (initial_symbols(w), c))
        .collect();
    let mut vocab: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    let mut merges = Vec::new();

    while merges.len() < num_merges {
        let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts
                    .entry((w[0].as_str(), w[1].as_str()))
                    .or_insert(0) += count;
            }
        }
        // BTreeMap iterates in (left, right) order, so the first maximum wins ties
        let mut best: Option<((&str, &str), u64)> = None;
        for (&pair, &count) in &pair_counts {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some(((left, right), count)) = best else {
            break;
        };
        if count < 2 {
            break;
        }
        let (left, right) = (left.to_string(), right.to_string());
        for (symbols, _) in words.iter_mut() {
            if symbols.len() > 1 {
                *symbols = merge_pair(symbols, &left, &right);
            }
        }
        vocab.insert(concat(&left, &right));
        merges.push((left, right));
    }

    BpeModel::with_vocab(merges, vocab).expect("greedy learning never repeats a merge")
}

/// Counts whitespace-free tokens for [`learn_bpe`], skipping protected
/// frame tokens.
pub fn count_words<'a, I>(tokens: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = BTreeMap::new();
    for token in tokens {
        if !token.is_empty() && !is_protected_token(token) {
            *counts.entry(token.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Splits tokens into subword pieces. Total over any input.
pub fn encode<S: AsRef<str>>(model: &BpeModel, tokens: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for token in tokens {
        let token = token.as_ref();
        if token.is_empty() || is_protected_token(token) {
            out.push(token.to_string());
            continue;
        }
        let symbols = model.segment(token);
        let last = symbols.len() - 1;
        for (i, mut symbol) in symbols.into_iter().enumerate() {
            if i == last {
                symbol.truncate(symbol.len() - END_OF_WORD.len());
            } else {
                symbol.push_str(JOINER);
            }
            out.push(symbol);
        }
    }
    out
}

/// Joins subword pieces back into tokens.
pub fn decode<S: AsRef<str>>(subwords: &[S]) -> Result<Vec<String>, BpeError> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for piece in subwords {
        let piece = piece.as_ref();
        match piece.strip_suffix(JOINER) {
            Some(stem) => {
                current.push_str(stem);
                open = true;
            }
            None => {
                current.push_str(piece);
                out.push(core::mem::take(&mut current));
                open = false;
            }
        }
    }
    if open {
        return Err(BpeError::DanglingJoiner(current));
    }
    Ok(out)
}

/// Like [`decode`], but a trailing unfinished word is closed instead of
/// rejected. Meant for model output, which may stop mid-word.
pub fn decode_lenient<S: AsRef<str>>(subwords: &[S]) -> Vec<String> {
    match decode(subwords) {
        Ok(tokens) => tokens,
        Err(BpeError::DanglingJoiner(rest)) => {
            let n = subwords.len();
            let mut tokens = decode(&subwords[..n - trailing_open(subwords)]).unwrap_or_default();
            if !rest.is_empty() {
                tokens.push(rest);
            }
            tokens
        }
        Err(_) => Vec::new(),
    }
}

fn trailing_open<S: AsRef<str>>(subwords: &[S]) -> usize {
    subwords
        .iter()
        .rev()
        .take_while(|p| p.as_ref().ends_with(JOINER))
        .count()
}
