use crate::corpus::{TokenId, TokenSeq};
use crate::encoder::{predict, ModelParams};
use crate::error::{Error, Result};
use crate::masking::mask_keywords;

/// Fraction of argmax-correct predictions.
pub fn accuracy(params: &ModelParams, tokens: &[TokenSeq], labels: &[usize]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if tokens.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sequences for {} labels",
            tokens.len(),
            labels.len()
        )));
    }
    let pred = predict(params, tokens)?;
    Ok(hit_rate(&pred, labels))
}

pub(crate) fn hit_rate(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy on the inputs as given and after every keyword occurrence is
/// replaced by MASK.
pub fn keyword_masked_eval(
    params: &ModelParams,
    tokens: &[TokenSeq],
    labels: &[usize],
    keywords: &[TokenId],
) -> Result<(f64, f64)> {
    let plain = accuracy(params, tokens, labels)?;
    let masked: Vec<TokenSeq> = tokens.iter().map(|t| mask_keywords(t, keywords)).collect();
    Ok((plain, accuracy(params, &masked, labels)?))
}
