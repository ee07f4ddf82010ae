//! Strong-signal keyword extraction from final-layer attention, grouped per
//! proxy and per class, and the two masking views built from them.

mod keywords;
mod mask;
mod stopwords;

pub use keywords::{
    aggregate_keywords, extract_keywords, median_length, temperature, word_attention_scores,
    KeywordTable, ProxyKeywords, ScoredSample, WordFilter,
};
pub use mask::{context_mask, mask_keywords, semantic_mask, MaskedSeq};
pub use stopwords::{is_stopword, STOPWORDS};
