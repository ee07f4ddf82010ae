//! Labeled text corpora, the word-level tokenizer, the synthetic campaign
//! generator and the dataset splits used by the evaluation protocols.

mod dataset;
mod jsonl;
mod split;
mod synth;
mod tokenize;
mod vocab;

pub use dataset::{Dataset, Sample};
pub use jsonl::{load_jsonl, save_jsonl};
pub use split::{split_incremental, stratified_holdout};
pub use synth::{generate_synthetic_campaigns, SynthConfig};
pub use tokenize::{split_words, tokenize, tokenize_with_max, TokenSeq, DEFAULT_MAX_LEN};
pub use vocab::{build_vocab, TokenId, Vocabulary};
