//! Per-class clusters ("proxies") in the encoder's latent space.

mod discover;
mod kmeans;
mod select;

pub use discover::{
    alpha_density_filter, assign_proxy, discover_proxies, Proxy, ProxyConfig, ProxySet,
};
pub use kmeans::{kmeans, kmeans_best, KMeansResult};
pub use select::{elbow_from_inertias, gap_statistic, select_k, Selection};
