use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::encoder::{forward, ModelParams};
use crate::error::Result;
use crate::linalg::squared_distance;
use crate::proxies::{assign_proxy, ProxySet};

/// Embedding pairs closer than this are skipped.
pub const MIN_EMBEDDING_DISTANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyLipschitz {
    pub proxy_id: usize,
    pub class: usize,
    pub members: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub proxies: Vec<ProxyLipschitz>,
    /// Maximum over proxies.
    pub l_score: f64,
    pub accuracy: f64,
}

/// Largest `‖f_i − f_j‖₁ / ‖e_i − e_j‖₂` over distinct member pairs.
pub fn pairwise_lipschitz(probs: &[&[f64]], embeddings: &[&[f64]]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..probs.len() {
        for j in i + 1..probs.len() {
            let de = squared_distance(embeddings[i], embeddings[j]).sqrt();
            if de < MIN_EMBEDDING_DISTANCE {
                continue;
            }
            let dp: f64 = probs[i]
                .iter()
                .zip(probs[j])
                .map(|(a, b)| (a - b).abs())
                .sum();
            best = best.max(dp / de);
        }
    }
    best
}

/// Local Lipschitz estimate per proxy. Samples are assigned to the nearest
/// proxy centroid of `proxies`, which must live in this model's embedding
/// space.
pub fn lipschitz_score(
    params: &ModelParams,
    proxies: &ProxySet,
    tokens: &[TokenSeq],
    labels: &[usize],
) -> Result<LipschitzReport> {
    let out = forward(params, tokens, None)?;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); proxies.len()];
    for (i, o) in out.iter().enumerate() {
        groups[assign_proxy(&o.pooled, proxies)?].push(i);
    }
    let mut per = Vec::with_capacity(proxies.len());
    for (p, members) in proxies.proxies.iter().zip(&groups) {
        let probs: Vec<&[f64]> = members
            .iter()
            .map(|&i| out[i].class_probs.as_slice())
            .collect();
        let emb: Vec<&[f64]> = members.iter().map(|&i| out[i].pooled.as_slice()).collect();
        per.push(ProxyLipschitz {
            proxy_id: p.id,
            class: p.class,
            members: members.len(),
            score: pairwise_lipschitz(&probs, &emb),
        });
    }
    let l_score = per.iter().map(|p| p.score).fold(0.0, f64::max);
    let pred: Vec<usize> = out
        .iter()
        .map(|o| crate::linalg::argmax(&o.class_probs))
        .collect();
    let accuracy = if labels.is_empty() {
        0.0
    } else {
        super::metrics::hit_rate(&pred, labels)
    };
    Ok(LipschitzReport {
        proxies: per,
        l_score,
        accuracy,
    })
}
