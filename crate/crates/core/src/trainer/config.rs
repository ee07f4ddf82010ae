use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SoftTripleParams};
use crate::proxies::ProxyConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Stage 1 only.
    PlainFt,
    /// Masked retraining plus masked fine-tuning, cross-entropy head, no
    /// smoothing.
    MaskOnly,
    /// Multi-center head with intra-proxy smoothing on unmasked inputs.
    SmoothOnly,
    /// Masking and smoothing together.
    Ufit,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::PlainFt, Mode::MaskOnly, Mode::SmoothOnly, Mode::Ufit];

    pub fn name(self) -> &'static str {
        match self {
            Mode::PlainFt => "plain_ft",
            Mode::MaskOnly => "mask_only",
            Mode::SmoothOnly => "smooth_only",
            Mode::Ufit => "ufit",
        }
    }

    pub fn uses_masking(self) -> bool {
        matches!(self, Mode::MaskOnly | Mode::Ufit)
    }

    pub fn uses_softtriple(self) -> bool {
        matches!(self, Mode::SmoothOnly | Mode::Ufit)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown mode `{s}`; expected one of plain_ft, mask_only, smooth_only, ufit"
                ))
            })
    }
}

/// Which input the stage-3 task and smoothing terms see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskView {
    /// The keyword-masked view that also carries the masked-token targets.
    Semantic,
    /// The untouched sequence.
    Original,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default = "mode")]
    pub mode: Mode,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default = "base_lr")]
    pub base_lr: f64,
    #[serde(default = "warmup_start_lr")]
    pub warmup_start_lr: f64,
    /// Warmup length as a fraction of one epoch.
    #[serde(default = "warmup_epochs")]
    pub warmup_epochs: f64,
    #[serde(default = "decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "decay_every")]
    pub decay_every: usize,
    #[serde(default = "max_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "patience")]
    pub patience: usize,
    /// Multiplier on the embedding layers' rate during stage 3.
    #[serde(default = "embedding_lr_factor")]
    pub embedding_lr_factor: f64,
    #[serde(default = "validation_fraction")]
    pub validation_fraction: f64,
    /// Share of each stage-3 batch given the context-masked view.
    #[serde(default = "context_mask_fraction")]
    pub context_mask_fraction: f64,
    #[serde(default = "mlm_probability")]
    pub mlm_probability: f64,
    #[serde(default = "keyword_top_k")]
    pub keyword_top_k: usize,
    #[serde(default = "min_freq")]
    pub min_freq: usize,
    /// Keep each sample's discovery-time proxy for smoothing instead of
    /// re-assigning by nearest centroid every batch.
    #[serde(default)]
    pub freeze_proxy_membership: bool,
    #[serde(default = "task_view")]
    pub task_view: TaskView,
    /// Rescale each batch gradient to at most this global L2 norm; unset
    /// means unclipped SGD.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub losses: LossWeights,
    #[serde(default)]
    pub softtriple: SoftTripleParams,
    #[serde(default)]
    pub proxies: ProxyConfig,
}

fn mode() -> Mode {
    Mode::Ufit
}
fn batch_size() -> usize {
    64
}
fn base_lr() -> f64 {
    1e-4
}
fn warmup_start_lr() -> f64 {
    1e-5
}
fn warmup_epochs() -> f64 {
    0.5
}
fn decay_factor() -> f64 {
    0.6
}
fn decay_every() -> usize {
    2
}
fn max_epochs() -> usize {
    10
}
fn patience() -> usize {
    2
}
fn embedding_lr_factor() -> f64 {
    0.5
}
fn validation_fraction() -> f64 {
    0.1
}
fn context_mask_fraction() -> f64 {
    0.25
}
fn mlm_probability() -> f64 {
    0.15
}
fn keyword_top_k() -> usize {
    10
}
fn min_freq() -> usize {
    1
}
fn task_view() -> TaskView {
    TaskView::Semantic
}

impl TrainConfig {
    /// Defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        toml::from_str(&format!("seed = {seed}")).expect("defaults parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("warmup_start_lr", self.warmup_start_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("decay_factor", self.decay_factor),
            ("embedding_lr_factor", self.embedding_lr_factor),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(&format!("{name} must lie in (0, 1]"));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.decay_every == 0 {
            return bad("batch_size, max_epochs and decay_every must be positive");
        }
        if !(self.warmup_epochs >= 0.0) {
            return bad("warmup_epochs must be non-negative");
        }
        for (name, v) in [
            ("validation_fraction", self.validation_fraction),
            ("context_mask_fraction", self.context_mask_fraction),
            ("mlm_probability", self.mlm_probability),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("max_grad_norm must be positive");
            }
        }
        if self.keyword_top_k == 0 || self.min_freq == 0 {
            return bad("keyword_top_k and min_freq must be positive");
        }
        self.model.validate()?;
        self.losses.validate()?;
        self.softtriple.validate()?;
        self.proxies.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = TrainConfig::with_seed(3);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.base_lr, 1e-4);
        assert_eq!(c.warmup_start_lr, 1e-5);
        assert_eq!(c.decay_factor, 0.6);
        assert_eq!(c.max_epochs, 10);
        assert_eq!(c.losses, LossWeights::default());
        assert_eq!(c.softtriple.lambda_scale, 20.0);
        assert_eq!(c.proxies.alpha, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = TrainConfig::with_seed(9);
        assert_eq!(TrainConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn missing_seed_and_bad_mode_are_reported() {
        let e = TrainConfig::from_toml("mode = \"ufit\"")
            .unwrap_err()
            .to_string();
        assert!(e.contains("seed"), "{e}");
        let e = TrainConfig::from_toml("seed = 1\nmode = \"fancy\"")
            .unwrap_err()
            .to_string();
        assert!(e.contains("plain_ft"), "{e}");
        assert!("smooth_only".parse::<Mode>().is_ok());
        assert!("nope".parse::<Mode>().is_err());
    }
}
