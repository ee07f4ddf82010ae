use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::Dataset;
use super::tokenize::split_words;
use crate::error::{Error, Result};

pub type TokenId = u32;

/// Word-level vocabulary. Ids 0..4 are reserved; retained words follow in
/// (frequency desc, word asc) order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_words(f.words)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { words: v.words }
    }
}

impl Vocabulary {
    pub const PAD: TokenId = 0;
    pub const UNKNOWN: TokenId = 1;
    pub const CLS: TokenId = 2;
    pub const MASK: TokenId = 3;
    pub const RESERVED: [&'static str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]"];

    fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Self { words, index }
    }

    /// Reserved tokens followed by `retained` in the given order.
    pub fn from_retained<I: IntoIterator<Item = String>>(retained: I) -> Self {
        let mut words: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        words.extend(retained);
        Self::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn get(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> &str {
        &self.words[id as usize]
    }

    pub fn is_reserved(id: TokenId) -> bool {
        (id as usize) < Self::RESERVED.len()
    }

    /// Hex SHA-256 over the id→word list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

pub fn build_vocab(dataset: &Dataset, min_freq: usize) -> Result<Vocabulary> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in dataset.samples() {
        for w in split_words(&s.text) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut retained: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_freq.max(1) && !Vocabulary::RESERVED.contains(&w.as_str()))
        .collect();
    retained.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocabulary::from_retained(
        retained.into_iter().map(|(w, _)| w),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;

    fn corpus(texts: &[&str]) -> Dataset {
        let samples = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sample {
                text: t.to_string(),
                label: i % 2,
                campaign: "c".into(),
                position: i as u64,
            })
            .collect();
        Dataset::new(samples, 2).unwrap()
    }

    #[test]
    fn min_freq_filters_rare_words() {
        let v = build_vocab(&corpus(&["a a b", "a c"]), 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.word(4), "a");
        assert_eq!(v.id("b"), Vocabulary::UNKNOWN);
        assert_eq!(v.id("c"), Vocabulary::UNKNOWN);
    }

    #[test]
    fn min_freq_one_keeps_everything_in_frequency_order() {
        let v = build_vocab(&corpus(&["a a b", "a c"]), 1).unwrap();
        let words: Vec<&str> = (4..v.len()).map(|i| v.word(i as TokenId)).collect();
        assert_eq!(words, ["a", "b", "c"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty = Dataset::new(vec![], 2).unwrap();
        assert!(matches!(build_vocab(&empty, 1), Err(Error::EmptyDataset)));
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = build_vocab(&corpus(&["x"]), 1).unwrap();
        assert_eq!(v.word(Vocabulary::PAD), "[PAD]");
        assert_eq!(v.word(Vocabulary::UNKNOWN), "[UNK]");
        assert_eq!(v.word(Vocabulary::CLS), "[CLS]");
        assert_eq!(v.word(Vocabulary::MASK), "[MASK]");
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let v = build_vocab(&corpus(&["alpha beta beta"]), 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("beta"), 4);
        assert_eq!(back.hash(), v.hash());
    }
}
