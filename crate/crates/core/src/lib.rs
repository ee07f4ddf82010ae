//! Controlled underfitting for text classifiers facing campaign shift.
//!
//! The crate holds a small word-level transformer with hand-written
//! gradients, latent-space proxy discovery, attention-based keyword masking,
//! the fine-tuning losses, a staged trainer and the evaluation harness.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod masking;
pub mod proxies;
pub mod seed;
pub mod trainer;

pub use corpus::{Dataset, Sample, SynthConfig, TokenSeq, Vocabulary};
pub use error::{Error, Result};
