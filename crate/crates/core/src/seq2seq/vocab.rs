use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token/index mapping with fixed reserved entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Reserved entries, then every token by descending frequency (ties in
    /// byte order).
    pub fn build<'a, I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let tokens: Vec<String> = RESERVED.iter().map(|t| t.to_string()).collect();
        let mut rest: Vec<(&str, u64)> = counts.into_iter().collect();
        rest.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab = Self::from_tokens(tokens).expect("reserved tokens are distinct");
        for (tok, _) in rest {
            vocab.push(tok);
        }
        vocab
    }

    /// Rebuilds a vocabulary from its index-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return None;
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return None;
            }
        }
        Some(Self { tokens, index })
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t.as_ref())).collect()
    }

    /// Maps indices back to tokens, dropping padding and sequence markers.
    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .filter(|&&i| i != PAD && i != BOS && i != EOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn reserved_indices_are_fixed() {
        let seqs = [vec!["b", "a", "b"]];
        let v = Vocab::build(seqs.iter().map(|s| s.as_slice()));
        assert_eq!(v.index_of("<pad>"), PAD);
        assert_eq!(v.index_of("<s>"), BOS);
        assert_eq!(v.index_of("</s>"), EOS);
        assert_eq!(v.index_of("<unk>"), UNK);
        assert!(v.index_of("b") < v.index_of("a"));
        assert_eq!(v.index_of("zzz"), UNK);
        assert_eq!(v.decode(&[BOS, v.index_of("a"), EOS, PAD]), vec!["a"]);
    }

    #[test]
    fn from_tokens_round_trips() {
        let seqs = [vec!["x", "y"]];
        let v = Vocab::build(seqs.iter().map(|s| s.as_slice()));
        assert_eq!(Vocab::from_tokens(v.tokens().to_vec()), Some(v));
        assert_eq!(Vocab::from_tokens(vec!["a".into()]), None);
    }
}
