//! Synthetic misinformation campaigns.
//!
//! Each campaign plants its own strong-signal keywords (disjoint across
//! campaigns) and shares class-correlated weak-signal words with every other
//! campaign. A classifier that latches onto the keywords fits a campaign
//! almost perfectly and then meets only unknown words in the next one.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

/// Generator settings. `seed` is required; the word lists are generated as
/// pseudo-words when not given explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default = "defaults::num_campaigns")]
    pub num_campaigns: usize,
    #[serde(default = "defaults::samples_per_campaign")]
    pub samples_per_campaign: usize,
    #[serde(default = "defaults::num_classes")]
    pub num_classes: usize,
    /// Noise words per sample are drawn uniformly from this inclusive range.
    #[serde(default = "defaults::min_length")]
    pub min_length: usize,
    #[serde(default = "defaults::max_length")]
    pub max_length: usize,
    #[serde(default = "defaults::strong_probability")]
    pub strong_probability: f64,
    #[serde(default = "defaults::weak_probability")]
    pub weak_probability: f64,
    /// Independent chances per sample to insert a weak-signal word.
    #[serde(default = "defaults::weak_slots")]
    pub weak_slots: usize,
    #[serde(default = "defaults::keywords_per_campaign")]
    pub keywords_per_campaign: usize,
    #[serde(default = "defaults::weak_pool_size")]
    pub weak_pool_size: usize,
    #[serde(default = "defaults::noise_pool_size")]
    pub noise_pool_size: usize,
    /// `[campaign][class]` keyword lists; overrides `keywords_per_campaign`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong_keywords: Option<Vec<Vec<Vec<String>>>>,
    /// `[class]` weak-signal pools; overrides `weak_pool_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_pools: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_pool: Option<Vec<String>>,
}

mod defaults {
    pub fn num_campaigns() -> usize {
        3
    }
    pub fn samples_per_campaign() -> usize {
        400
    }
    pub fn num_classes() -> usize {
        2
    }
    pub fn min_length() -> usize {
        8
    }
    pub fn max_length() -> usize {
        16
    }
    pub fn strong_probability() -> f64 {
        0.9
    }
    pub fn weak_probability() -> f64 {
        0.6
    }
    pub fn weak_slots() -> usize {
        2
    }
    pub fn keywords_per_campaign() -> usize {
        1
    }
    pub fn weak_pool_size() -> usize {
        8
    }
    pub fn noise_pool_size() -> usize {
        150
    }
}

/// Word lists after defaults are applied.
#[derive(Clone, Debug, PartialEq)]
pub struct CampaignWords {
    pub strong: Vec<Vec<Vec<String>>>,
    pub weak: Vec<Vec<String>>,
    pub noise: Vec<String>,
}

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "ri", "zu", "me", "ta", "lo", "vi", "ne", "sa", "du", "pe", "go", "xi", "ha", "mu",
];

fn pseudo_word(prefix: &str, mut index: usize) -> String {
    let mut w = prefix.to_string();
    for _ in 0..3 {
        w.push_str(SYLLABLES[index % 16]);
        index /= 16;
    }
    w
}

impl SynthConfig {
    /// Defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            num_campaigns: defaults::num_campaigns(),
            samples_per_campaign: defaults::samples_per_campaign(),
            num_classes: defaults::num_classes(),
            min_length: defaults::min_length(),
            max_length: defaults::max_length(),
            strong_probability: defaults::strong_probability(),
            weak_probability: defaults::weak_probability(),
            weak_slots: defaults::weak_slots(),
            keywords_per_campaign: defaults::keywords_per_campaign(),
            weak_pool_size: defaults::weak_pool_size(),
            noise_pool_size: defaults::noise_pool_size(),
            strong_keywords: None,
            weak_pools: None,
            noise_pool: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn words(&self) -> CampaignWords {
        let c = self.num_classes;
        let strong = self.strong_keywords.clone().unwrap_or_else(|| {
            (0..self.num_campaigns)
                .map(|camp| {
                    (0..c)
                        .map(|class| {
                            (0..self.keywords_per_campaign)
                                .map(|j| {
                                    pseudo_word(
                                        "z",
                                        (camp * c + class) * self.keywords_per_campaign + j,
                                    )
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        });
        let weak = self.weak_pools.clone().unwrap_or_else(|| {
            (0..c)
                .map(|class| {
                    (0..self.weak_pool_size)
                        .map(|i| pseudo_word("w", class * self.weak_pool_size + i))
                        .collect()
                })
                .collect()
        });
        let noise = self.noise_pool.clone().unwrap_or_else(|| {
            (0..self.noise_pool_size)
                .map(|i| pseudo_word("n", i))
                .collect()
        });
        CampaignWords {
            strong,
            weak,
            noise,
        }
    }

    fn validate(&self, words: &CampaignWords) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.num_campaigns == 0 || self.samples_per_campaign == 0 {
            return bad("num_campaigns and samples_per_campaign must be positive".into());
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return bad("need 1 <= min_length <= max_length".into());
        }
        for (name, p) in [
            ("strong_probability", self.strong_probability),
            ("weak_probability", self.weak_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if words.strong.len() != self.num_campaigns {
            return bad("strong_keywords must list every campaign".into());
        }
        if words.strong.iter().any(|per| per.len() != self.num_classes) {
            return bad("strong_keywords must list every class of every campaign".into());
        }
        if words.weak.len() != self.num_classes || words.weak.iter().any(|p| p.is_empty()) {
            return bad("weak_pools needs one non-empty pool per class".into());
        }
        if words.noise.is_empty() {
            return bad("noise_pool must not be empty".into());
        }
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (camp, per_class) in words.strong.iter().enumerate() {
            for w in per_class.iter().flatten() {
                if let Some(&other) = owner.get(w.as_str()) {
                    if other != camp {
                        return Err(Error::OverlappingKeywords {
                            word: w.clone(),
                            first: other,
                            second: camp,
                        });
                    }
                }
                owner.insert(w, camp);
            }
        }
        for w in words.weak.iter().flatten().chain(&words.noise) {
            if owner.contains_key(w.as_str()) {
                return bad(format!(
                    "strong keyword `{w}` also appears in a weak or noise pool"
                ));
            }
        }
        Ok(())
    }
}

pub fn campaign_tag(index: usize) -> String {
    format!("campaign-{index:02}")
}

pub fn generate_synthetic_campaigns(config: &SynthConfig) -> Result<Dataset> {
    let words = config.words();
    config.validate(&words)?;
    let mut rng = seed::stream(config.seed, "synth");
    let c = config.num_classes;
    let n = config.samples_per_campaign;
    let mut samples = Vec::with_capacity(config.num_campaigns * n);
    let mut order = Vec::with_capacity(config.num_campaigns);

    for camp in 0..config.num_campaigns {
        let tag = campaign_tag(camp);
        let mut labels: Vec<usize> = (0..c)
            .flat_map(|class| std::iter::repeat_n(class, n / c + usize::from(class < n % c)))
            .collect();
        labels.shuffle(&mut rng);
        for (i, &label) in labels.iter().enumerate() {
            let len = rng.random_range(config.min_length..=config.max_length);
            let mut tokens: Vec<&str> = (0..len)
                .map(|_| words.noise[rng.random_range(0..words.noise.len())].as_str())
                .collect();
            let keywords = &words.strong[camp][label];
            if !keywords.is_empty() && rng.random_bool(config.strong_probability) {
                let kw = &keywords[rng.random_range(0..keywords.len())];
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, kw);
            }
            let pool = &words.weak[label];
            for _ in 0..config.weak_slots {
                if rng.random_bool(config.weak_probability) {
                    let w = &pool[rng.random_range(0..pool.len())];
                    let at = rng.random_range(0..=tokens.len());
                    tokens.insert(at, w);
                }
            }
            samples.push(Sample {
                text: tokens.join(" "),
                label,
                campaign: tag.clone(),
                position: (camp * n + i) as u64,
            });
        }
        order.push(tag);
    }
    Dataset::with_order(samples, c, order)
}
