use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::squared_distance;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step, first to last.
    pub history: Vec<f64>,
}

/// Nearest centroid, ties to the lower index.
pub(crate) fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeding. A cluster that empties is
/// re-seeded at the point farthest from its current centroid.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed_value: u64,
    max_iter: usize,
) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::TooFewPoints { k, points: n });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch(
            "points of differing dimension".into(),
        ));
    }
    let mut rng = seed::stream(seed_value, "kmeans");
    let mut centroids = plus_plus(points, k, &mut rng);
    let assign =
        |c: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) { points.iter().map(|p| nearest(c, p)).unzip() };
    let (mut assignments, mut dist) = assign(&centroids);
    let mut history = vec![dist.iter().sum::<f64>()];

    for _ in 0..max_iter.max(1) {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = 0;
                for i in 1..n {
                    if dist[i] > dist[far] {
                        far = i;
                    }
                }
                centroids[c] = points[far].clone();
                dist[far] = 0.0;
            }
        }
        let (next, next_dist) = assign(&centroids);
        let changed = next != assignments;
        assignments = next;
        dist = next_dist;
        history.push(dist.iter().sum());
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia: *history.last().expect("non-empty history"),
        history,
    })
}

/// Lowest-inertia result over `n_init` seeded restarts; ties keep the
/// earlier restart.
pub fn kmeans_best(
    points: &[Vec<f64>],
    k: usize,
    seed_value: u64,
    max_iter: usize,
    n_init: usize,
) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..n_init.max(1) {
        let res = kmeans(
            points,
            k,
            seed::derive_seed(seed_value, &format!("restart-{r}")),
            max_iter,
        )?;
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}
