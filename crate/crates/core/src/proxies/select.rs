use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans_best;
use crate::error::Result;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Gap,
    Elbow,
}

/// Reference sets drawn per K for the gap statistic.
pub const GAP_REFERENCES: usize = 10;

fn log_w(w: f64) -> f64 {
    (w + f64::MIN_POSITIVE).ln()
}

/// `Gap(K) = mean_b ln W*_Kb − ln W_K` for K in `1..=k_max`, with the
/// references drawn uniformly from the per-dimension bounding box.
pub fn gap_statistic(
    points: &[Vec<f64>],
    k_max: usize,
    seed_value: u64,
    max_iter: usize,
    n_init: usize,
) -> Result<Vec<f64>> {
    let dim = points[0].len();
    let lo: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..dim)
        .map(|j| {
            points
                .iter()
                .map(|p| p[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut rng = seed::stream(seed_value, "gap-reference");
    let references: Vec<Vec<Vec<f64>>> = (0..GAP_REFERENCES)
        .map(|_| {
            points
                .iter()
                .map(|_| {
                    (0..dim)
                        .map(|j| {
                            if hi[j] > lo[j] {
                                rng.random_range(lo[j]..hi[j])
                            } else {
                                lo[j]
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    (1..=k_max)
        .map(|k| {
            let ks = seed::derive_seed(seed_value, &format!("k-{k}"));
            let w = kmeans_best(points, k, ks, max_iter, n_init)?.inertia;
            let mut reference = 0.0;
            for (b, r) in references.iter().enumerate() {
                let rs = seed::derive_seed(ks, &format!("ref-{b}"));
                reference += log_w(kmeans_best(r, k, rs, max_iter, n_init)?.inertia);
            }
            Ok(reference / GAP_REFERENCES as f64 - log_w(w))
        })
        .collect()
}

/// K (1-based) at the largest second difference `W_{K−1} − 2W_K + W_{K+1}`;
/// fewer than three values give 1. Ties keep the smaller K.
pub fn elbow_from_inertias(inertias: &[f64]) -> usize {
    if inertias.len() < 3 {
        return 1;
    }
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..inertias.len() {
        let second = inertias[k - 2] - 2.0 * inertias[k - 1] + inertias[k];
        if second > best.1 {
            best = (k, second);
        }
    }
    best.0
}

/// Number of clusters in `1..=p_max` for one class's points. `p_max` is
/// capped at `n/2` (minimum 1); identical points always give 1.
pub fn select_k(
    points: &[Vec<f64>],
    p_max: usize,
    method: Selection,
    seed_value: u64,
    max_iter: usize,
    n_init: usize,
) -> Result<usize> {
    let k_max = p_max.min(points.len() / 2).max(1);
    if k_max == 1 || points.iter().all(|p| p == &points[0]) {
        return Ok(1);
    }
    match method {
        Selection::Gap => {
            let gaps = gap_statistic(points, k_max, seed_value, max_iter, n_init)?;
            let mut best = 0;
            for (i, g) in gaps.iter().enumerate() {
                if *g > gaps[best] {
                    best = i;
                }
            }
            Ok(best + 1)
        }
        Selection::Elbow => {
            let inertias: Vec<f64> = (1..=k_max)
                .map(|k| {
                    let s = seed::derive_seed(seed_value, &format!("k-{k}"));
                    kmeans_best(points, k, s, max_iter, n_init).map(|r| r.inertia)
                })
                .collect::<Result<_>>()?;
            Ok(elbow_from_inertias(&inertias))
        }
    }
}
