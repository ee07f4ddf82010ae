use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lipschitz::lipschitz_score;
use super::metrics::{accuracy, keyword_masked_eval};
use crate::corpus::{stratified_holdout, Dataset, Sample};
use crate::error::{Error, Result};
use crate::trainer::{
    prepare, recenter_proxies, tokenize_dataset, train_prepared, BatchObserver, Mode, Stage,
    TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train on campaigns `0..=k`, test on `k+1`.
    Incremental,
    /// Train on campaign `k`, test on `k+1`.
    PriorYear,
    /// Train on campaign 0, test on every later campaign.
    FixedFirst,
    /// Train on `0..=k` plus most of `k+1`, test on the held-out rest of `k+1`.
    Oracle,
    /// Every ordered pair of distinct campaigns.
    Pairwise,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::Incremental,
        Protocol::PriorYear,
        Protocol::FixedFirst,
        Protocol::Oracle,
        Protocol::Pairwise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Incremental => "incremental",
            Protocol::PriorYear => "prior_year",
            Protocol::FixedFirst => "fixed_first",
            Protocol::Oracle => "oracle",
            Protocol::Pairwise => "pairwise",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
                Error::InvalidConfig(format!(
                    "unknown protocol `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub runs: usize,
    /// Share of each training campaign held out per label for ID testing,
    /// and of campaign `k+1` under the oracle protocol.
    pub holdout_fraction: f64,
    /// Run `r` trains with seed `train.seed + r`.
    pub train: TrainConfig,
}

impl EvalConfig {
    pub fn new(train: TrainConfig, protocol: Protocol, runs: usize) -> Self {
        Self {
            protocol,
            runs,
            holdout_fraction: 0.2,
            train,
        }
    }
}

#[derive(Clone, Debug)]
struct TestSet {
    k: usize,
    campaign: String,
    data: Dataset,
    /// `nnad` for unseen campaigns, `oracle` for held-out samples of a
    /// campaign that was also trained on.
    split: &'static str,
}

#[derive(Clone, Debug)]
struct Unit {
    train_campaigns: Vec<String>,
    train: Dataset,
    id_test: Dataset,
    tests: Vec<TestSet>,
}

/// Every result of one (training unit, test set, mode, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub train_campaigns: Vec<String>,
    pub test_campaign: String,
    pub split: String,
    pub id_accuracy: f64,
    pub test_accuracy: f64,
    /// ID accuracy with every extracted keyword masked.
    pub id_masked_accuracy: Option<f64>,
    /// Lipschitz score on the test set.
    pub l_score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub batches: usize,
    pub samples: usize,
    pub violations: usize,
}

/// Counts training samples that belong to a forbidden campaign or to the
/// test slice.
pub struct CampaignAudit {
    forbidden_campaigns: HashSet<String>,
    forbidden_samples: HashSet<(String, u64)>,
    batches: AtomicUsize,
    samples: AtomicUsize,
    violations: AtomicUsize,
    first_violation: Mutex<Option<String>>,
}

impl CampaignAudit {
    pub fn new(
        forbidden_campaigns: HashSet<String>,
        forbidden_samples: HashSet<(String, u64)>,
    ) -> Self {
        Self {
            forbidden_campaigns,
            forbidden_samples,
            batches: AtomicUsize::new(0),
            samples: AtomicUsize::new(0),
            violations: AtomicUsize::new(0),
            first_violation: Mutex::new(None),
        }
    }

    pub fn summary(&self) -> AuditSummary {
        AuditSummary {
            batches: self.batches.load(Ordering::Relaxed),
            samples: self.samples.load(Ordering::Relaxed),
            violations: self.violations.load(Ordering::Relaxed),
        }
    }

    pub fn first_violation(&self) -> Option<String> {
        self.first_violation.lock().expect("audit lock").clone()
    }
}

impl BatchObserver for CampaignAudit {
    fn observe(&self, stage: Stage, batch: &[&Sample]) {
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.samples.fetch_add(batch.len(), Ordering::Relaxed);
        for s in batch {
            if self.forbidden_campaigns.contains(&s.campaign)
                || self
                    .forbidden_samples
                    .contains(&(s.campaign.clone(), s.position))
            {
                self.violations.fetch_add(1, Ordering::Relaxed);
                let mut first = self.first_violation.lock().expect("audit lock");
                if first.is_none() {
                    *first = Some(format!(
                        "{} sample {} of {}",
                        stage.name(),
                        s.position,
                        s.campaign
                    ));
                }
            }
        }
    }
}

fn id_split(train: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    stratified_holdout(train, fraction, seed, "id-test", |s| {
        (s.campaign.clone(), s.label)
    })
}

fn units(dataset: &Dataset, config: &EvalConfig, seed: u64) -> Result<Vec<Unit>> {
    let order = dataset.campaign_order().to_vec();
    let n = order.len();
    if n < 2 {
        return Err(Error::InvalidDataset(format!(
            "evaluation needs at least 2 campaigns, found {n}"
        )));
    }
    let f = config.holdout_fraction;
    let select = |names: &[String]| -> Result<Dataset> {
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        dataset.select_campaigns(&refs)
    };
    let test = |k: usize, campaign: &str, split| -> Result<TestSet> {
        Ok(TestSet {
            k,
            campaign: campaign.to_string(),
            data: dataset.select_campaigns(&[campaign])?,
            split,
        })
    };
    let unit = |names: Vec<String>, tests: Vec<TestSet>| -> Result<Unit> {
        let (train, id_test) = id_split(&select(&names)?, f, seed)?;
        Ok(Unit {
            train_campaigns: names,
            train,
            id_test,
            tests,
        })
    };
    let mut out = Vec::new();
    match config.protocol {
        Protocol::Incremental => {
            for k in 0..n - 1 {
                out.push(unit(
                    order[..=k].to_vec(),
                    vec![test(k, &order[k + 1], "nnad")?],
                )?);
            }
        }
        Protocol::PriorYear => {
            for k in 0..n - 1 {
                out.push(unit(
                    vec![order[k].clone()],
                    vec![test(k, &order[k + 1], "nnad")?],
                )?);
            }
        }
        Protocol::FixedFirst => {
            let tests = (1..n)
                .map(|j| test(j - 1, &order[j], "nnad"))
                .collect::<Result<Vec<_>>>()?;
            out.push(unit(vec![order[0].clone()], tests)?);
        }
        Protocol::Pairwise => {
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        out.push(unit(
                            vec![order[a].clone()],
                            vec![test(a, &order[b], "nnad")?],
                        )?);
                    }
                }
            }
        }
        Protocol::Oracle => {
            for k in 0..n - 1 {
                let next = dataset.select_campaigns(&[order[k + 1].as_str()])?;
                let (next_train, next_test) =
                    stratified_holdout(&next, f, seed, "oracle-test", |s| s.label)?;
                let (past_train, id_test) = id_split(&select(&order[..=k])?, f, seed)?;
                let mut names = order[..=k].to_vec();
                names.push(order[k + 1].clone());
                out.push(Unit {
                    train_campaigns: names,
                    train: past_train.concat(&next_train)?,
                    id_test,
                    tests: vec![TestSet {
                        k,
                        campaign: order[k + 1].clone(),
                        data: next_test,
                        split: "oracle",
                    }],
                });
            }
        }
    }
    Ok(out)
}

fn forbidden(unit: &Unit) -> CampaignAudit {
    let trained: HashSet<&String> = unit.train_campaigns.iter().collect();
    let mut campaigns = HashSet::new();
    let mut samples = HashSet::new();
    for t in &unit.tests {
        if trained.contains(&t.campaign) {
            samples.extend(
                t.data
                    .samples()
                    .iter()
                    .map(|s| (s.campaign.clone(), s.position)),
            );
        } else {
            campaigns.insert(t.campaign.clone());
        }
    }
    samples.extend(
        unit.id_test
            .samples()
            .iter()
            .map(|s| (s.campaign.clone(), s.position)),
    );
    CampaignAudit::new(campaigns, samples)
}

fn run_cell(
    unit: &Unit,
    modes: &[Mode],
    config: &TrainConfig,
) -> Result<(Vec<CellResult>, AuditSummary)> {
    let audit = forbidden(unit);
    let prepared = prepare(&unit.train, config)?;
    let num_classes = unit.train.num_classes();
    let output = train_prepared(&prepared, num_classes, config, modes, &audit)?;
    let summary = audit.summary();
    if summary.violations > 0 {
        log::error!(
            "campaign audit: {} violations, first {}",
            summary.violations,
            audit.first_violation().unwrap_or_default()
        );
    }
    let vocab = &output.vocab;
    let max_len = config.model.max_len;
    let id = tokenize_dataset(&unit.id_test, vocab, max_len);
    let keyword_ids = output.keywords.as_ref().map(|k| k.all_ids(vocab));
    let mut rows = Vec::new();
    for run in &output.runs {
        let params = &run.final_checkpoint().params;
        let (id_acc, id_masked) = match &keyword_ids {
            Some(ids) => {
                let (a, m) = keyword_masked_eval(params, &id.tokens, &id.labels, ids)?;
                (a, Some(m))
            }
            None => (accuracy(params, &id.tokens, &id.labels)?, None),
        };
        let proxies = match &output.proxies {
            Some(set) => Some(recenter_proxies(params, set, &prepared.train)?),
            None => None,
        };
        for t in &unit.tests {
            let test = tokenize_dataset(&t.data, vocab, max_len);
            let test_acc = accuracy(params, &test.tokens, &test.labels)?;
            let l_score = match &proxies {
                Some(set) => {
                    Some(lipschitz_score(params, set, &test.tokens, &test.labels)?.l_score)
                }
                None => None,
            };
            rows.push(CellResult {
                mode: run.mode,
                k: t.k,
                seed: config.seed,
                train_campaigns: unit.train_campaigns.clone(),
                test_campaign: t.campaign.clone(),
                split: t.split.into(),
                id_accuracy: id_acc,
                test_accuracy: test_acc,
                id_masked_accuracy: id_masked,
                l_score,
            });
        }
    }
    Ok((rows, summary))
}

/// Raw grid results before aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub audit: AuditSummary,
}

/// Trains and tests every (training unit, run) cell in parallel.
pub fn run_grid(dataset: &Dataset, config: &EvalConfig, modes: &[Mode]) -> Result<GridResult> {
    if config.runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    if modes.is_empty() {
        return Err(Error::InvalidConfig("no modes requested".into()));
    }
    config.train.validate()?;
    let seeds: Vec<u64> = (0..config.runs as u64)
        .map(|r| config.train.seed + r)
        .collect();
    let mut jobs = Vec::new();
    for &seed in &seeds {
        for unit in units(dataset, config, seed)? {
            jobs.push((seed, unit));
        }
    }
    let results: Vec<(Vec<CellResult>, AuditSummary)> = jobs
        .par_iter()
        .map(|(seed, unit)| {
            let cfg = TrainConfig {
                seed: *seed,
                ..config.train.clone()
            };
            run_cell(unit, modes, &cfg)
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    let mut audit = AuditSummary::default();
    for (rows, a) in results {
        cells.extend(rows);
        audit.batches += a.batches;
        audit.samples += a.samples;
        audit.violations += a.violations;
    }
    Ok(GridResult {
        seeds,
        cells,
        audit,
    })
}
