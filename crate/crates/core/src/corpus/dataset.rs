use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled text. `position` orders samples in time (campaign order).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    pub label: usize,
    pub campaign: String,
    pub position: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    campaign_order: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, ordering campaigns by their smallest `position`
    /// (first appearance breaks ties).
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        let mut first: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            let e = first.entry(s.campaign.as_str()).or_insert((s.position, i));
            e.0 = e.0.min(s.position);
        }
        let mut order: Vec<(&str, (u64, usize))> = first.into_iter().collect();
        order.sort_by_key(|(_, key)| *key);
        let campaign_order = order.into_iter().map(|(c, _)| c.to_string()).collect();
        Self::with_order(samples, num_classes, campaign_order)
    }

    pub fn with_order(
        samples: Vec<Sample>,
        num_classes: usize,
        campaign_order: Vec<String>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= num_classes {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has label {} but there are {num_classes} classes",
                    s.label
                )));
            }
            if s.text.trim().is_empty() {
                return Err(Error::InvalidDataset(format!("sample {i} has empty text")));
            }
            if !campaign_order.contains(&s.campaign) {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} belongs to unknown campaign `{}`",
                    s.campaign
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            campaign_order,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn campaign_order(&self) -> &[String] {
        &self.campaign_order
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Samples of the named campaigns, keeping the relative order of both
    /// samples and campaigns.
    pub fn select_campaigns(&self, campaigns: &[&str]) -> Result<Dataset> {
        for c in campaigns {
            if !self.campaign_order.iter().any(|x| x == c) {
                return Err(Error::InvalidDataset(format!("unknown campaign `{c}`")));
            }
        }
        let order: Vec<String> = self
            .campaign_order
            .iter()
            .filter(|c| campaigns.contains(&c.as_str()))
            .cloned()
            .collect();
        let samples = self
            .samples
            .iter()
            .filter(|s| campaigns.contains(&s.campaign.as_str()))
            .cloned()
            .collect();
        Dataset::with_order(samples, self.num_classes, order)
    }

    /// A dataset over an explicit subset of samples; campaigns with no
    /// remaining samples are dropped from the order.
    pub fn from_subset(&self, samples: Vec<Sample>) -> Result<Dataset> {
        let order = self
            .campaign_order
            .iter()
            .filter(|c| samples.iter().any(|s| &s.campaign == *c))
            .cloned()
            .collect();
        Dataset::with_order(samples, self.num_classes, order)
    }

    /// Concatenation; campaign order is `self` then new campaigns of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut order = self.campaign_order.clone();
        for c in &other.campaign_order {
            if !order.contains(c) {
                order.push(c.clone());
            }
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::with_order(samples, self.num_classes.max(other.num_classes), order)
    }
}
