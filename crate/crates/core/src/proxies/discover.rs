use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_best, nearest};
use super::select::{select_k, Selection};
use crate::error::{Error, Result};
use crate::linalg::squared_distance;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    /// Fraction of each cluster's members dropped as low-density.
    #[serde(default = "alpha")]
    pub alpha: f64,
    /// Largest K tried per class.
    #[serde(default = "p_max")]
    pub p_max: usize,
    #[serde(default = "selection")]
    pub selection: Selection,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
    /// k-means restarts per fit.
    #[serde(default = "n_init")]
    pub n_init: usize,
}

fn alpha() -> f64 {
    0.5
}
fn p_max() -> usize {
    5
}
fn selection() -> Selection {
    Selection::Gap
}
fn max_iter() -> usize {
    100
}
fn n_init() -> usize {
    3
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            alpha: alpha(),
            p_max: p_max(),
            selection: selection(),
            max_iter: max_iter(),
            n_init: n_init(),
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} must lie in (0, 1)",
                self.alpha
            )));
        }
        if self.p_max == 0 || self.max_iter == 0 || self.n_init == 0 {
            return Err(Error::InvalidConfig(
                "p_max, max_iter and n_init must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proxy {
    pub id: usize,
    pub class: usize,
    pub centroid: Vec<f64>,
    /// Indices into the embedding list the set was discovered on.
    pub members: Vec<usize>,
    pub high_density: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxySet {
    pub proxies: Vec<Proxy>,
    /// Chosen K for every class.
    pub k_per_class: Vec<usize>,
}

impl ProxySet {
    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    pub fn centroids(&self) -> Vec<Vec<f64>> {
        self.proxies.iter().map(|p| p.centroid.clone()).collect()
    }

    pub fn of_class(&self, class: usize) -> impl Iterator<Item = &Proxy> {
        self.proxies.iter().filter(move |p| p.class == class)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Keeps the `max(1, round((1 − alpha)·n))` members nearest the centroid,
/// ties to the lower index. Returned indices are ascending.
pub fn alpha_density_filter(
    embeddings: &[Vec<f64>],
    members: &[usize],
    centroid: &[f64],
    alpha: f64,
) -> Vec<usize> {
    if members.is_empty() {
        return Vec::new();
    }
    let keep = (seed::round_half_away((1.0 - alpha) * members.len() as f64) as usize)
        .clamp(1, members.len());
    let mut ranked: Vec<(f64, usize)> = members
        .iter()
        .map(|&i| (squared_distance(&embeddings[i], centroid), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = ranked[..keep].iter().map(|&(_, i)| i).collect();
    kept.sort_unstable();
    kept
}

/// Clusters every class separately: K by [`select_k`], then k-means, then the
/// density filter per cluster. Proxy ids run class by class.
pub fn discover_proxies(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    config: &ProxyConfig,
    seed_value: u64,
) -> Result<ProxySet> {
    config.validate()?;
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} embeddings for {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if embeddings.is_empty() {
        return Err(Error::EmptyDataset);
    }
    type Clusters = Vec<(Vec<f64>, Vec<usize>)>;
    let per_class: Vec<Result<Clusters>> = (0..num_classes)
        .into_par_iter()
        .map(|class| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if idx.is_empty() {
                return Ok(Vec::new());
            }
            let pts: Vec<Vec<f64>> = idx.iter().map(|&i| embeddings[i].clone()).collect();
            let cs = seed::derive_seed(seed_value, &format!("class-{class}"));
            let k = select_k(
                &pts,
                config.p_max,
                config.selection,
                cs,
                config.max_iter,
                config.n_init,
            )?;
            let fit = kmeans_best(&pts, k, cs, config.max_iter, config.n_init)?;
            Ok((0..k)
                .map(|c| {
                    let members: Vec<usize> = idx
                        .iter()
                        .zip(&fit.assignments)
                        .filter(|(_, &a)| a == c)
                        .map(|(&i, _)| i)
                        .collect();
                    (fit.centroids[c].clone(), members)
                })
                .filter(|(_, m)| !m.is_empty())
                .collect())
        })
        .collect();

    let mut proxies = Vec::new();
    let mut k_per_class = Vec::with_capacity(num_classes);
    for (class, clusters) in per_class.into_iter().enumerate() {
        let clusters = clusters?;
        k_per_class.push(clusters.len());
        for (centroid, members) in clusters {
            let high_density = alpha_density_filter(embeddings, &members, &centroid, config.alpha);
            proxies.push(Proxy {
                id: proxies.len(),
                class,
                centroid,
                members,
                high_density,
            });
        }
    }
    Ok(ProxySet {
        proxies,
        k_per_class,
    })
}

/// Id of the nearest proxy centroid, ties to the lower id.
pub fn assign_proxy(embedding: &[f64], set: &ProxySet) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::EmptyProxySet);
    }
    let centroids = set.centroids();
    Ok(set.proxies[nearest(&centroids, embedding).0].id)
}
