use std::path::Path;

use serde::{Deserialize, Serialize};

use super::incremental::{run_grid, AuditSummary, CellResult, EvalConfig, Protocol};
use super::ttest::{ttest, MIN_RUNS};
use crate::corpus::Dataset;
use crate::error::Result;
use crate::trainer::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                std: 0.0,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub campaign: String,
    pub split: String,
    pub accuracy: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    /// Per-run means over test cells.
    pub id_accuracy: MeanStd,
    pub test_accuracy: MeanStd,
    pub id_masked_accuracy: Option<MeanStd>,
    pub l_score: Option<MeanStd>,
    pub per_campaign: Vec<CampaignSummary>,
    /// Welch p-value of per-run test accuracy against the reference mode.
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub reference: Option<Mode>,
    pub summary: Vec<ModeSummary>,
    pub cells: Vec<CellResult>,
    pub audit: AuditSummary,
}

/// Mean over cells of one run, for each run seed.
fn per_run<F: Fn(&CellResult) -> Option<f64>>(
    cells: &[&CellResult],
    seeds: &[u64],
    f: F,
) -> Option<Vec<f64>> {
    seeds
        .iter()
        .map(|s| {
            let v: Vec<f64> = cells
                .iter()
                .filter(|c| c.seed == *s)
                .map(|c| f(c))
                .collect::<Option<_>>()?;
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

impl EvalReport {
    pub fn from_cells(
        protocol: Protocol,
        modes: &[Mode],
        seeds: Vec<u64>,
        cells: Vec<CellResult>,
        audit: AuditSummary,
    ) -> Result<Self> {
        let reference = modes.contains(&Mode::Ufit).then_some(Mode::Ufit);
        let of_mode =
            |m: Mode| -> Vec<&CellResult> { cells.iter().filter(|c| c.mode == m).collect() };
        let ref_runs =
            reference.and_then(|r| per_run(&of_mode(r), &seeds, |c| Some(c.test_accuracy)));
        let mut summary = Vec::with_capacity(modes.len());
        for &mode in modes {
            let mine = of_mode(mode);
            let test_runs = per_run(&mine, &seeds, |c| Some(c.test_accuracy)).unwrap_or_default();
            let id_runs = per_run(&mine, &seeds, |c| Some(c.id_accuracy)).unwrap_or_default();
            let mut per_campaign: Vec<CampaignSummary> = Vec::new();
            for c in &mine {
                if !per_campaign
                    .iter()
                    .any(|p| p.campaign == c.test_campaign && p.split == c.split)
                {
                    let xs: Vec<f64> = mine
                        .iter()
                        .filter(|d| d.test_campaign == c.test_campaign && d.split == c.split)
                        .map(|d| d.test_accuracy)
                        .collect();
                    per_campaign.push(CampaignSummary {
                        campaign: c.test_campaign.clone(),
                        split: c.split.clone(),
                        accuracy: MeanStd::of(&xs),
                    });
                }
            }
            let p_value = match (&ref_runs, reference) {
                (Some(r), Some(rm))
                    if rm != mode && r.len() >= MIN_RUNS && test_runs.len() >= MIN_RUNS =>
                {
                    Some(ttest(&test_runs, r)?)
                }
                _ => None,
            };
            summary.push(ModeSummary {
                mode,
                id_accuracy: MeanStd::of(&id_runs),
                test_accuracy: MeanStd::of(&test_runs),
                id_masked_accuracy: per_run(&mine, &seeds, |c| c.id_masked_accuracy)
                    .map(|v| MeanStd::of(&v)),
                l_score: per_run(&mine, &seeds, |c| c.l_score).map(|v| MeanStd::of(&v)),
                per_campaign,
                p_value,
            });
        }
        Ok(Self {
            protocol,
            modes: modes.to_vec(),
            seeds,
            reference,
            summary,
            cells,
            audit,
        })
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    /// Per-run values of one cell field for a mode, in seed order.
    pub fn per_run(&self, mode: Mode, field: fn(&CellResult) -> Option<f64>) -> Option<Vec<f64>> {
        let mine: Vec<&CellResult> = self.cells.iter().filter(|c| c.mode == mode).collect();
        per_run(&mine, &self.seeds, field)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat `mode,k,seed,split,accuracy` rows; each cell gives an `id` row
    /// and a row for its test split.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "k", "seed", "split", "accuracy"])?;
        for c in &self.cells {
            for (split, acc) in [("id", c.id_accuracy), (c.split.as_str(), c.test_accuracy)] {
                w.write_record([
                    c.mode.name(),
                    &c.k.to_string(),
                    &c.seed.to_string(),
                    split,
                    &format!("{acc}"),
                ])?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, self.to_json()?)?;
        std::fs::write(csv, self.to_csv()?)?;
        Ok(())
    }
}

/// Runs the evaluation grid and aggregates it.
pub fn incremental_eval(
    dataset: &Dataset,
    config: &EvalConfig,
    modes: &[Mode],
) -> Result<EvalReport> {
    let grid = run_grid(dataset, config, modes)?;
    EvalReport::from_cells(config.protocol, modes, grid.seeds, grid.cells, grid.audit)
}
