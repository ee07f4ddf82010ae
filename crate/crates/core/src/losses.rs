//! Loss terms of the underfitting objective. Each function returns its value;
//! the `*_grad` companions return the gradient with respect to their direct
//! inputs (logits, probabilities or similarities), which the encoder chains
//! back through the network.

use serde::{Deserialize, Serialize};

use crate::linalg::{log_sum_exp, softmax};

/// Lower clamp for probabilities inside every KL term.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "half")]
    pub lambda_mlm: f64,
    #[serde(default = "half")]
    pub lambda_kl: f64,
    #[serde(default = "one")]
    pub lambda_smooth: f64,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mlm: 0.5,
            lambda_kl: 0.5,
            lambda_smooth: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_mlm: 0.0,
        lambda_kl: 0.0,
        lambda_smooth: 0.0,
    };

    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.lambda_mlm, self.lambda_kl, self.lambda_smooth];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(crate::Error::InvalidConfig(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftTripleParams {
    /// Scale applied to class similarities before the softmax.
    #[serde(default = "default_scale")]
    pub lambda_scale: f64,
    /// Margin subtracted from the true-class similarity.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_scale() -> f64 {
    20.0
}

fn default_delta() -> f64 {
    0.01
}

impl Default for SoftTripleParams {
    fn default() -> Self {
        Self {
            lambda_scale: 20.0,
            delta: 0.01,
        }
    }
}

impl SoftTripleParams {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.lambda_scale > 0.0) || !(0.0..1.0).contains(&self.delta) {
            return Err(crate::Error::InvalidConfig(
                "softtriple needs lambda_scale > 0 and 0 <= delta < 1".into(),
            ));
        }
        Ok(())
    }
}

/// `-ln softmax(logits)[label]`
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}

/// Mean cross-entropy over masked positions; 0 when nothing is masked.
pub fn mlm_loss(logits: &[Vec<f64>], targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(l, &t)| cross_entropy(l, t))
        .sum();
    sum / targets.len() as f64
}

/// `D_KL(U(C) ‖ probs)` with probabilities clamped at [`PROB_FLOOR`].
pub fn kl_uniform_loss(probs: &[f64]) -> f64 {
    let c = probs.len() as f64;
    probs
        .iter()
        .map(|&p| (1.0 / c) * ((1.0 / c) / p.max(PROB_FLOOR)).ln())
        .sum()
}

/// Gradient of [`kl_uniform_loss`] with respect to the logits behind
/// `probs = softmax(logits)`.
pub fn kl_uniform_grad_logits(probs: &[f64]) -> Vec<f64> {
    let c = probs.len() as f64;
    let live: Vec<bool> = probs.iter().map(|&p| p >= PROB_FLOOR).collect();
    let m = live.iter().filter(|&&l| l).count() as f64;
    probs
        .iter()
        .zip(&live)
        .map(|(&p, &l)| (m * p - if l { 1.0 } else { 0.0 }) / c)
        .collect()
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()))
        .sum()
}

/// Symmetrized KL, `D_KL(p‖q) + D_KL(q‖p)`.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a - b) * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()))
        .sum()
}

/// Gradients of [`symmetric_kl`] with respect to `p` and `q`.
pub fn symmetric_kl_grad(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = Vec::with_capacity(p.len());
    let mut gq = Vec::with_capacity(p.len());
    for (&a, &b) in p.iter().zip(q) {
        let log_ratio = a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln();
        let da = if a >= PROB_FLOOR { (a - b) / a } else { 0.0 };
        let db = if b >= PROB_FLOOR { (a - b) / b } else { 0.0 };
        gp.push(log_ratio + da);
        gq.push(-log_ratio - db);
    }
    (gp, gq)
}

/// Similarity of an embedding to one class: its inner products with the
/// class centers, averaged under their own softmax.
pub fn softtriple_similarity(x: &[f64], centers: &[&[f64]]) -> f64 {
    let ips: Vec<f64> = centers.iter().map(|w| crate::linalg::dot(x, w)).collect();
    similarity_from_products(&ips)
}

pub fn similarity_from_products(ips: &[f64]) -> f64 {
    softmax(ips).iter().zip(ips).map(|(a, s)| a * s).sum()
}

/// `dS / d ip_k = a_k (1 + ip_k − S)`
pub fn similarity_grad(ips: &[f64]) -> Vec<f64> {
    let a = softmax(ips);
    let s: f64 = a.iter().zip(ips).map(|(a, s)| a * s).sum();
    a.iter()
        .zip(ips)
        .map(|(a, ip)| a * (1.0 + ip - s))
        .collect()
}

fn softtriple_logits(sims: &[f64], label: usize, params: &SoftTripleParams) -> Vec<f64> {
    sims.iter()
        .enumerate()
        .map(|(j, &s)| {
            let margin = if j == label { params.delta } else { 0.0 };
            params.lambda_scale * (s - margin)
        })
        .collect()
}

/// Cross-entropy over `λ(S_j − δ·[j = label])`.
pub fn softtriple_loss(sims: &[f64], label: usize, params: &SoftTripleParams) -> f64 {
    cross_entropy(&softtriple_logits(sims, label, params), label)
}

pub fn softtriple_grad(sims: &[f64], label: usize, params: &SoftTripleParams) -> Vec<f64> {
    let mut g = cross_entropy_grad(&softtriple_logits(sims, label, params), label);
    for v in &mut g {
        *v *= params.lambda_scale;
    }
    g
}

/// Partner with the largest symmetrized KL to `i` among samples sharing its
/// proxy; ties go to the lower index.
fn farthest_partner(probs: &[Vec<f64>], proxies: &[usize], i: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..probs.len() {
        if j == i || proxies[j] != proxies[i] {
            continue;
        }
        let d = symmetric_kl(&probs[i], &probs[j]);
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((j, d));
        }
    }
    best
}

/// `(1/n) Σ_i max_{j: proxy(j)=proxy(i)} D_SKL(f_i, f_j)`; anchors without a
/// partner add 0.
pub fn intra_proxy_smooth_loss(probs: &[Vec<f64>], proxies: &[usize]) -> f64 {
    let n = probs.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .filter_map(|i| farthest_partner(probs, proxies, i).map(|(_, d)| d))
        .sum();
    sum / n as f64
}

/// Gradient of [`intra_proxy_smooth_loss`] with respect to each probability
/// vector (the max is treated as a fixed selection).
pub fn intra_proxy_smooth_grad(probs: &[Vec<f64>], proxies: &[usize]) -> Vec<Vec<f64>> {
    let n = probs.len();
    let mut grads: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.len()]).collect();
    for i in 0..n {
        if let Some((j, _)) = farthest_partner(probs, proxies, i) {
            let (gp, gq) = symmetric_kl_grad(&probs[i], &probs[j]);
            for c in 0..gp.len() {
                grads[i][c] += gp[c] / n as f64;
                grads[j][c] += gq[c] / n as f64;
            }
        }
    }
    grads
}

/// Chains a gradient on `softmax(z)` back to `z`.
pub fn softmax_backward(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

pub fn ft_loss(task: f64, mlm: f64, kl: f64, weights: &LossWeights) -> f64 {
    task + weights.lambda_mlm * mlm + weights.lambda_kl * kl
}

pub fn total_loss(ft: f64, smooth: f64, weights: &LossWeights) -> f64 {
    ft + weights.lambda_smooth * smooth
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_mlm_prediction_costs_ln_v() {
        let logits = vec![vec![0.0; 100]; 3];
        assert!(close(mlm_loss(&logits, &[1, 50, 99]), 100f64.ln(), 1e-12));
        assert_eq!(mlm_loss(&[], &[]), 0.0);
        let mut sharp = vec![0.0; 10];
        sharp[4] = 60.0;
        assert!(mlm_loss(&[sharp], &[4]) < 1e-20);
    }

    #[test]
    fn kl_uniform_values() {
        assert_eq!(kl_uniform_loss(&[0.5, 0.5]), 0.0);
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!(close(kl_uniform_loss(&[0.75, 0.25]), expected, 1e-15));
        assert!(close(expected, 0.14384, 1e-5));
        let clamped = kl_uniform_loss(&[1.0, 0.0]);
        assert!(close(
            clamped,
            0.5 * 0.5f64.ln() + 0.5 * (0.5 * 1e12f64).ln(),
            1e-9
        ));
        assert!(kl_uniform_grad_logits(&[0.25; 4])
            .iter()
            .all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn similarity_examples() {
        let w = [0.6, 0.8];
        let x = [1.0, 0.0];
        assert!(close(softtriple_similarity(&x, &[&w]), 0.6, 1e-15));
        assert!(close(softtriple_similarity(&x, &[&w, &w, &w]), 0.6, 1e-15));
        assert!(close(
            similarity_from_products(&[1.0, -1.0]),
            1f64.tanh(),
            1e-15
        ));
    }

    #[test]
    fn softtriple_examples() {
        let p = SoftTripleParams::default();
        let v = softtriple_loss(&[0.9, 0.1], 0, &p);
        assert!(close(v, (1.0 + (2.0f64 - 17.8).exp()).ln(), 1e-13));
        assert!(close(v, 1.37e-7, 1e-9));
        let tie = softtriple_loss(&[0.5, 0.5], 0, &p);
        assert!(close(tie, (1.0 + 0.2f64.exp()).ln(), 1e-14));
        assert!(close(tie, 0.7982, 1e-4));
    }

    #[test]
    fn smooth_pair_example() {
        let probs = vec![vec![0.9, 0.1], vec![0.6, 0.4]];
        let kl_pq = 0.9 * (0.9f64 / 0.6).ln() + 0.1 * (0.1f64 / 0.4).ln();
        let kl_qp = 0.6 * (0.6f64 / 0.9).ln() + 0.4 * (0.4f64 / 0.1).ln();
        let v = intra_proxy_smooth_loss(&probs, &[3, 3]);
        assert!(close(v, kl_pq + kl_qp, 1e-14));
        assert!(close(v, 0.53753, 1e-4));
        assert_eq!(intra_proxy_smooth_loss(&probs, &[0, 1]), 0.0);
        assert_eq!(
            intra_proxy_smooth_loss(&vec![vec![0.3, 0.7]; 4], &[1; 4]),
            0.0
        );
    }

    #[test]
    fn composites() {
        let w = LossWeights::default();
        assert!(close(ft_loss(1.0, 0.4, 0.2, &w), 1.3, 1e-15));
        assert_eq!(ft_loss(0.7, 0.4, 0.2, &LossWeights::ZERO), 0.7);
        assert_eq!(ft_loss(0.0, 0.0, 0.0, &w), 0.0);
        assert!(close(total_loss(1.3, 0.5, &w), 1.8, 1e-15));
        assert_eq!(total_loss(1.3, 0.5, &LossWeights::ZERO), 1.3);
        assert_eq!(total_loss(1.3, 0.0, &w), 1.3);
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|r| r / s).collect()
    }

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn skl_symmetric_nonnegative(a in proptest::collection::vec(0.01f64..1.0, 4), b in proptest::collection::vec(0.01f64..1.0, 4)) {
            let (p, q) = (simplex(&a), simplex(&b));
            prop_assert!((symmetric_kl(&p, &q) - symmetric_kl(&q, &p)).abs() < 1e-15);
            prop_assert!(symmetric_kl(&p, &q) >= 0.0);
            prop_assert!(symmetric_kl(&p, &p).abs() < 1e-15);
            prop_assert!((symmetric_kl(&p, &q) - kl_divergence(&p, &q) - kl_divergence(&q, &p)).abs() < 1e-12);
        }

        #[test]
        fn softtriple_k1_zero_margin_is_scaled_ce(s in proptest::collection::vec(-1.0f64..1.0, 2..6), label_seed in 0usize..100) {
            let label = label_seed % s.len();
            let p = SoftTripleParams { lambda_scale: 20.0, delta: 0.0 };
            let scaled: Vec<f64> = s.iter().map(|v| 20.0 * v).collect();
            prop_assert!((softtriple_loss(&s, label, &p) - cross_entropy(&scaled, label)).abs() < 1e-10);
        }

        #[test]
        fn local_gradients_match_differences(z in proptest::collection::vec(-2.0f64..2.0, 3), w in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let kl = |z: &[f64]| kl_uniform_loss(&softmax(z));
            let g = kl_uniform_grad_logits(&softmax(&z));
            for (a, n) in g.iter().zip(numeric(kl, &z)) {
                prop_assert!((a - n).abs() < 1e-7);
            }
            let g = similarity_grad(&z);
            for (a, n) in g.iter().zip(numeric(similarity_from_products, &z)) {
                prop_assert!((a - n).abs() < 1e-7);
            }
            let p = SoftTripleParams::default();
            let g = softtriple_grad(&z, 1, &p);
            for (a, n) in g.iter().zip(numeric(|s| softtriple_loss(s, 1, &p), &z)) {
                prop_assert!((a - n).abs() < 1e-5 * n.abs().max(1.0));
            }
            let q = softmax(&w);
            let (gp, _) = symmetric_kl_grad(&softmax(&z), &q);
            let chained = softmax_backward(&softmax(&z), &gp);
            for (a, n) in chained.iter().zip(numeric(|z| symmetric_kl(&softmax(z), &q), &z)) {
                prop_assert!((a - n).abs() < 1e-7);
            }
        }

        #[test]
        fn losses_are_nonnegative(z in proptest::collection::vec(-5.0f64..5.0, 3), label in 0usize..3) {
            let p = softmax(&z);
            prop_assert!(cross_entropy(&z, label) >= 0.0);
            prop_assert!(kl_uniform_loss(&p) >= -1e-15);
            prop_assert!(softtriple_loss(&z, label, &SoftTripleParams::default()) >= 0.0);
        }
    }
}
