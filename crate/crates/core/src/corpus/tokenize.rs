use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};

pub const DEFAULT_MAX_LEN: usize = 64;

/// Token ids of one sample; the first id is always CLS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
}

impl TokenSeq {
    /// Number of non-PAD tokens, CLS included.
    pub fn len(&self) -> usize {
        self.ids.iter().filter(|&&t| t != Vocabulary::PAD).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lowercases and splits on Unicode whitespace and ASCII punctuation.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSeq {
    tokenize_with_max(text, vocab, DEFAULT_MAX_LEN)
}

/// CLS followed by word ids, truncated from the right to `max_len` tokens.
pub fn tokenize_with_max(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSeq {
    let mut ids = Vec::with_capacity(max_len.min(text.len() / 2 + 1));
    ids.push(Vocabulary::CLS);
    ids.extend(
        split_words(text)
            .iter()
            .take(max_len.saturating_sub(1))
            .map(|w| vocab.id(w)),
    );
    TokenSeq { ids }
}
