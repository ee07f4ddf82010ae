use std::fs;
use std::path::Path;

use super::checkpoint::{Checkpoint, Stage};
use super::config::{Mode, TrainConfig};
use super::stages::{
    class_keyword_ids, stage1_finetune, stage2_semantic_mlm, stage3_finetune, BatchObserver,
    LogRecord, NoObserver, StageResult, TokenizedSplit,
};
use crate::corpus::{build_vocab, stratified_holdout, tokenize_with_max, Dataset, Vocabulary};
use crate::encoder::{embed, ModelParams};
use crate::error::{Error, Result};
use crate::masking::{extract_keywords, KeywordTable};
use crate::proxies::{discover_proxies, ProxySet};
use crate::seed;

/// Vocabulary plus tokenized training and validation splits.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: TokenizedSplit,
    pub val: TokenizedSplit,
}

pub fn tokenize_dataset(dataset: &Dataset, vocab: &Vocabulary, max_len: usize) -> TokenizedSplit {
    TokenizedSplit {
        samples: dataset.samples().to_vec(),
        tokens: dataset
            .samples()
            .iter()
            .map(|s| tokenize_with_max(&s.text, vocab, max_len))
            .collect(),
        labels: dataset.labels(),
    }
}

/// Splits off the validation set and builds the vocabulary from the rest.
pub fn prepare(dataset: &Dataset, config: &TrainConfig) -> Result<Prepared> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train, val) = stratified_holdout(
        dataset,
        config.validation_fraction,
        config.seed,
        "validation",
        |s| s.label,
    )?;
    let vocab = build_vocab(&train, config.min_freq)?;
    let max_len = config.model.max_len;
    Ok(Prepared {
        train: tokenize_dataset(&train, &vocab, max_len),
        val: tokenize_dataset(&val, &vocab, max_len),
        vocab,
    })
}

#[derive(Clone, Debug)]
pub struct ModeRun {
    pub mode: Mode,
    /// Every checkpoint this mode passes through, in stage order.
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRecord>,
}

impl ModeRun {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints
            .last()
            .expect("every mode has a stage-1 checkpoint")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub vocab: Vocabulary,
    pub proxies: Option<ProxySet>,
    pub keywords: Option<KeywordTable>,
    pub runs: Vec<ModeRun>,
}

impl TrainOutput {
    pub fn run(&self, mode: Mode) -> Option<&ModeRun> {
        self.runs.iter().find(|r| r.mode == mode)
    }
}

fn retag(log: &[LogRecord], mode: Mode) -> Vec<LogRecord> {
    log.iter()
        .cloned()
        .map(|mut r| {
            match &mut r {
                LogRecord::Step { mode: m, .. } | LogRecord::Epoch { mode: m, .. } => *m = mode,
            }
            r
        })
        .collect()
}

fn checkpoint(
    stage: Stage,
    mode: Mode,
    result: &StageResult,
    vocab: &Vocabulary,
    keywords: Option<&KeywordTable>,
    proxies: Option<&ProxySet>,
) -> Checkpoint {
    Checkpoint {
        stage,
        mode,
        epoch: result.best_epoch,
        validation_metric: result.best_metric,
        vocab_hash: vocab.hash(),
        params: result.params.clone(),
        keywords: keywords.cloned(),
        proxies: proxies.cloned(),
    }
}

/// Trains several modes on one dataset. Stages 1 and 2 and the proxy and
/// keyword discovery are computed once and shared, which gives the same
/// result as training each mode alone.
pub fn train_modes(
    dataset: &Dataset,
    config: &TrainConfig,
    modes: &[Mode],
    observer: &dyn BatchObserver,
) -> Result<TrainOutput> {
    config.validate()?;
    let prepared = prepare(dataset, config)?;
    train_prepared(&prepared, dataset.num_classes(), config, modes, observer)
}

pub fn train_prepared(
    prepared: &Prepared,
    num_classes: usize,
    config: &TrainConfig,
    modes: &[Mode],
    observer: &dyn BatchObserver,
) -> Result<TrainOutput> {
    let Prepared { vocab, train, val } = prepared;
    let mut init_rng = seed::stream(config.seed, "init");
    let init = ModelParams::new(&config.model, vocab.len(), num_classes, &mut init_rng)?;

    let mut log1 = Vec::new();
    let first = modes.first().copied().unwrap_or(config.mode);
    let s1 = stage1_finetune(init, train, val, config, first, &mut log1, observer)?;

    let need_proxies = modes.iter().any(|m| *m != Mode::PlainFt);
    let need_keywords = modes.iter().any(|m| m.uses_masking());
    let mut proxies = None;
    let mut keywords = None;
    if need_proxies {
        let emb: Vec<Vec<f64>> = train
            .tokens
            .iter()
            .map(|t| embed(&s1.params, t))
            .collect::<Result<_>>()?;
        let set = discover_proxies(
            &emb,
            &train.labels,
            num_classes,
            &config.proxies,
            config.seed,
        )?;
        if need_keywords {
            keywords = Some(extract_keywords(
                &s1.params,
                &set,
                &train.tokens,
                vocab,
                config.keyword_top_k,
            )?);
        }
        proxies = Some(set);
    }

    let mut s2 = None;
    let mut log2 = Vec::new();
    let class_ids = keywords
        .as_ref()
        .map(|k| class_keyword_ids(k, num_classes, vocab))
        .unwrap_or_else(|| vec![Vec::new(); num_classes]);
    if need_keywords {
        s2 = Some(stage2_semantic_mlm(
            s1.params.clone(),
            &class_ids,
            train,
            val,
            config,
            first,
            &mut log2,
            observer,
        )?);
    }

    let mut runs = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut log = retag(&log1, mode);
        let mut cps = vec![checkpoint(Stage::Stage1Ft, mode, &s1, vocab, None, None)];
        if mode != Mode::PlainFt {
            let set = proxies.as_ref().expect("proxies computed");
            let start = if mode.uses_masking() {
                let s2 = s2.as_ref().expect("stage 2 computed");
                log.extend(retag(&log2, mode));
                cps.push(checkpoint(
                    Stage::Stage2Mlm,
                    mode,
                    s2,
                    vocab,
                    keywords.as_ref(),
                    Some(set),
                ));
                s2.params.clone()
            } else {
                s1.params.clone()
            };
            let s3 = stage3_finetune(
                start, mode, &class_ids, set, train, val, config, &mut log, observer,
            )?;
            let kw = if mode.uses_masking() {
                keywords.as_ref()
            } else {
                None
            };
            cps.push(checkpoint(
                Stage::Stage3Ufit,
                mode,
                &s3,
                vocab,
                kw,
                Some(set),
            ));
        }
        runs.push(ModeRun {
            mode,
            checkpoints: cps,
            log,
        });
    }
    Ok(TrainOutput {
        vocab: vocab.clone(),
        proxies,
        keywords,
        runs,
    })
}

/// Runs the pipeline for `config.mode` and, when `out_dir` is given, writes
/// every artifact there.
pub fn train_pipeline(
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<ModeRun> {
    let output = train_modes(dataset, config, &[config.mode], &NoObserver)?;
    if let Some(dir) = out_dir {
        write_artifacts(&output, config, dir)?;
    }
    Ok(output.runs.into_iter().next().expect("one mode requested"))
}

pub fn write_artifacts(output: &TrainOutput, config: &TrainConfig, dir: &Path) -> Result<()> {
    let run = output
        .run(config.mode)
        .ok_or_else(|| Error::InvalidConfig(format!("mode {} was not trained", config.mode)))?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved.toml"), config.to_toml()?)?;
    fs::write(
        dir.join("vocab.json"),
        serde_json::to_string(&output.vocab)?,
    )?;
    for cp in &run.checkpoints {
        cp.save(&dir.join(format!("{}.ckpt", cp.stage.name())))?;
    }
    if run.mode != Mode::PlainFt {
        if let Some(set) = &output.proxies {
            set.save(&dir.join("proxies.json"))?;
        }
        if run.mode.uses_masking() {
            if let Some(k) = &output.keywords {
                k.save(&dir.join("keywords.tsv"), &dir.join("keyword_masks.json"))?;
            }
        }
    }
    let mut text = String::new();
    for r in &run.log {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(dir.join("train_log.jsonl"), text)?;
    Ok(())
}

/// Loads `vocab.json` and the last checkpoint present in a run directory.
pub fn load_run(dir: &Path) -> Result<(Vocabulary, Checkpoint)> {
    let vocab: Vocabulary = serde_json::from_str(&fs::read_to_string(dir.join("vocab.json"))?)?;
    for stage in [Stage::Stage3Ufit, Stage::Stage2Mlm, Stage::Stage1Ft] {
        let path = dir.join(format!("{}.ckpt", stage.name()));
        if path.exists() {
            return Ok((vocab.clone(), Checkpoint::load(&path, &vocab)?));
        }
    }
    Err(Error::Checkpoint(format!(
        "no checkpoint in {}",
        dir.display()
    )))
}
