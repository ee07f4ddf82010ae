use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{TokenId, TokenSeq, Vocabulary};

/// A masked copy of a sequence with the original tokens at the masked
/// positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedSeq {
    pub tokens: TokenSeq,
    /// Ascending.
    pub positions: Vec<usize>,
    pub targets: Vec<TokenId>,
}

impl MaskedSeq {
    pub fn pairs(&self) -> Vec<(usize, TokenId)> {
        self.positions
            .iter()
            .copied()
            .zip(self.targets.iter().copied())
            .collect()
    }
}

fn maskable(t: TokenId) -> bool {
    t != Vocabulary::CLS && t != Vocabulary::PAD
}

/// Masks every keyword occurrence, then random other positions until at
/// least `ceil(p · n)` of the `n` non-CLS tokens are masked.
pub fn semantic_mask<R: Rng + ?Sized>(
    seq: &TokenSeq,
    keywords: &[TokenId],
    p: f64,
    rng: &mut R,
) -> MaskedSeq {
    let n = seq.ids.iter().filter(|&&t| maskable(t)).count();
    // the small offset keeps products like 0.15 · 20 from rounding up
    let need = ((p * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut chosen: Vec<usize> = Vec::new();
    let mut rest: Vec<usize> = Vec::new();
    for (i, &t) in seq.ids.iter().enumerate() {
        if !maskable(t) {
            continue;
        }
        if keywords.contains(&t) {
            chosen.push(i);
        } else {
            rest.push(i);
        }
    }
    if chosen.len() < need {
        let extra = need - chosen.len();
        let (picked, _) = rest.partial_shuffle(rng, extra);
        chosen.extend_from_slice(picked);
    }
    chosen.sort_unstable();
    let mut ids = seq.ids.clone();
    let targets = chosen
        .iter()
        .map(|&i| std::mem::replace(&mut ids[i], Vocabulary::MASK))
        .collect();
    MaskedSeq {
        tokens: TokenSeq { ids },
        positions: chosen,
        targets,
    }
}

/// Masks every non-keyword token except CLS.
pub fn context_mask(seq: &TokenSeq, keywords: &[TokenId]) -> TokenSeq {
    TokenSeq {
        ids: seq
            .ids
            .iter()
            .map(|&t| {
                if maskable(t) && !keywords.contains(&t) {
                    Vocabulary::MASK
                } else {
                    t
                }
            })
            .collect(),
    }
}

/// Replaces every keyword occurrence with MASK and nothing else.
pub fn mask_keywords(seq: &TokenSeq, keywords: &[TokenId]) -> TokenSeq {
    TokenSeq {
        ids: seq
            .ids
            .iter()
            .map(|&t| {
                if maskable(t) && keywords.contains(&t) {
                    Vocabulary::MASK
                } else {
                    t
                }
            })
            .collect(),
    }
}
