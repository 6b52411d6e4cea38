use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{AdnetError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases and splits on whitespace; every non-alphanumeric character is
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub min_frequency: usize,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_frequency` times, ordered by
    /// descending count with ties broken lexicographically.
    pub fn build<S: AsRef<str>>(sentences: &[S], min_frequency: usize) -> Result<Self> {
        if sentences.is_empty() {
            return Err(AdnetError::Empty("corpus"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in sentences {
            for tok in tokenize(s.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_frequency.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
        let tokens = RESERVED.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(t, _)| t)).collect();
        Ok(Vocabulary::from_tokens(tokens, min_frequency))
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index, min_frequency }
    }

    pub(crate) fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Token ids followed by EOS, at most `max_len` ids in total.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(text).iter().map(|t| self.id(t)).collect();
        ids.truncate(max_len.saturating_sub(1));
        ids.push(EOS);
        ids
    }

    /// Drops PAD/BOS/EOS and joins the remaining tokens with single spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(AdnetError::TokenOutOfRange { id, size: self.len() })?;
            if !matches!(id, PAD | BOS | EOS) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Aye, sir."), vec!["aye", ",", "sir", "."]);
        assert_eq!(tokenize("  I've  done "), vec!["i", "'", "ve", "done"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn min_frequency_filters() {
        let v = Vocabulary::build(&["a b", "a c"], 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b") && !v.contains("c"));
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn single_token_vocabulary() {
        let v = Vocabulary::build(&["x"], 1).unwrap();
        assert_eq!(v.len(), RESERVED.len() + 1);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(EOS), Some("<eos>"));
        assert_eq!(v.token(4), Some("x"));
    }

    #[test]
    fn ordering_is_by_count_then_lexicographic() {
        let v = Vocabulary::build(&["d c b", "c b", "b a"], 1).unwrap();
        assert_eq!(&v.tokens()[4..], &["b", "c", "a", "d"]);
        let again = Vocabulary::build(&["d c b", "c b", "b a"], 1).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let none: [&str; 0] = [];
        assert!(matches!(Vocabulary::build(&none, 1), Err(AdnetError::Empty(_))));
    }

    #[test]
    fn encode_table_example() {
        let v = Vocabulary::build(&["aye , sir .", "yes , sir ."], 1).unwrap();
        let ids = v.encode("Aye, sir.", 20);
        assert_eq!(ids, vec![v.id("aye"), v.id(","), v.id("sir"), v.id("."), EOS]);
        assert_eq!(v.decode(&ids).unwrap(), "aye , sir .");
    }

    #[test]
    fn unknown_token_and_truncation() {
        let v = Vocabulary::build(&["a b c"], 1).unwrap();
        assert_eq!(v.encode("zzz", 20), vec![UNK, EOS]);
        let ids = v.encode("a b c a b c", 4);
        assert_eq!(ids.len(), 4);
        assert_eq!(*ids.last().unwrap(), EOS);
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let v = Vocabulary::build(&["a"], 1).unwrap();
        assert!(matches!(v.decode(&[99]), Err(AdnetError::TokenOutOfRange { id: 99, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_without_unknowns(words in proptest::collection::vec("[a-z]{1,6}|[,.?!]", 1..12)) {
            let text = words.join(" ");
            let v = Vocabulary::build(&[text.as_str()], 1).unwrap();
            let normalized = tokenize(&text).join(" ");
            prop_assert_eq!(v.decode(&v.encode(&text, 64)).unwrap(), normalized);
        }

        #[test]
        fn bijection_over_non_reserved(words in proptest::collection::vec("[a-z]{1,4}", 1..30), min in 1usize..3) {
            let v = Vocabulary::build(&[words.join(" ")], min).unwrap();
            for (i, t) in v.tokens().iter().enumerate() {
                prop_assert_eq!(v.id(t), i);
            }
        }
    }
}
