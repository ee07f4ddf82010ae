use rand::seq::SliceRandom;
use serde::Serialize;

use super::checkpoint::Stage;
use super::config::{Mode, TaskView, TrainConfig};
use super::schedule::lr_schedule;
use crate::corpus::{Sample, TokenId, TokenSeq};
use crate::encoder::{
    backward, embed, evaluate_loss, predict, Example, GradientSet, HeadKind, LossSpec, ModelParams,
    ProxyCentroids, TaskLoss, TensorGroup,
};
use crate::error::{Error, Result};
use crate::linalg::l2_norm;
use crate::losses::LossWeights;
use crate::masking::{context_mask, mask_keywords, semantic_mask, KeywordTable};
use crate::proxies::ProxySet;
use crate::seed;

/// Receives every training batch before its update; used to audit which
/// samples reach training.
pub trait BatchObserver: Sync {
    fn observe(&self, stage: Stage, batch: &[&Sample]);
}

pub struct NoObserver;

impl BatchObserver for NoObserver {
    fn observe(&self, _: Stage, _: &[&Sample]) {}
}

/// Tokenized training or validation split.
#[derive(Clone, Debug)]
pub struct TokenizedSplit {
    pub samples: Vec<Sample>,
    pub tokens: Vec<TokenSeq>,
    pub labels: Vec<usize>,
}

impl TokenizedSplit {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        stage: &'static str,
        mode: Mode,
        epoch: usize,
        step: usize,
        lr: f64,
        task: f64,
        mlm: f64,
        kl: f64,
        smooth: f64,
        total: f64,
    },
    Epoch {
        stage: &'static str,
        mode: Mode,
        epoch: usize,
        metric: &'static str,
        value: f64,
        improved: bool,
    },
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub epochs_run: usize,
}

/// Global L2 norm over every gradient tensor.
pub fn gradient_norm(grads: &GradientSet) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// One SGD update. Embedding tensors move at `lr · embedding_factor`;
/// proxy rows are renormalized afterwards.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientSet, lr: f64, embedding_factor: f64) {
    for ((group, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        let rate = if group == TensorGroup::Embedding {
            lr * embedding_factor
        } else {
            lr
        };
        if rate == 0.0 {
            continue;
        }
        for (a, b) in p.iter_mut().zip(g) {
            *a -= rate * b;
        }
    }
    if params.head != HeadKind::Linear {
        params.normalize_proxies();
    }
}

pub fn validation_accuracy(params: &ModelParams, split: &TokenizedSplit) -> Result<f64> {
    let pred = predict(params, &split.tokens)?;
    let hits = pred
        .iter()
        .zip(&split.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / split.len().max(1) as f64)
}

struct Loop<'a> {
    stage: Stage,
    mode: Mode,
    tag: String,
    config: &'a TrainConfig,
    embedding_factor: f64,
    higher_is_better: bool,
    metric: &'static str,
}

impl Loop<'_> {
    #[allow(clippy::too_many_arguments)]
    fn run<B, V>(
        &self,
        mut params: ModelParams,
        train: &TokenizedSplit,
        spec: LossSpec,
        mut make_batch: B,
        validate: V,
        log: &mut Vec<LogRecord>,
        observer: &dyn BatchObserver,
    ) -> Result<StageResult>
    where
        B: FnMut(&[usize], &ModelParams, &mut rand_chacha::ChaCha8Rng) -> Vec<Example>,
        V: Fn(&ModelParams) -> Result<Option<f64>>,
    {
        let cfg = self.config;
        let mut order_rng = seed::stream(cfg.seed, &format!("{}-order", self.tag));
        let mut mask_rng = seed::stream(cfg.seed, &format!("{}-mask", self.tag));
        let n = train.len();
        let spe = n.div_ceil(cfg.batch_size).max(1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0;
        let mut best: Option<(usize, f64, ModelParams)> = None;
        let mut stale = 0;
        let mut epochs_run = 0;
        for epoch in 1..=cfg.max_epochs {
            epochs_run = epoch;
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
                observer.observe(self.stage, &batch);
                let examples = make_batch(chunk, &params, &mut mask_rng);
                let (loss, grads) = backward(&params, &examples, &spec).map_err(|e| match e {
                    Error::NonFiniteLoss(detail) => Error::Diverged {
                        stage: self.stage.name().into(),
                        epoch,
                        detail,
                    },
                    other => other,
                })?;
                let lr = lr_schedule(step, spe, cfg);
                let mut rate = lr;
                if let Some(c) = cfg.max_grad_norm {
                    let norm = gradient_norm(&grads);
                    if norm > c {
                        rate *= c / norm;
                    }
                }
                sgd_step(&mut params, &grads, rate, self.embedding_factor);
                if !params.is_finite() {
                    return Err(Error::Diverged {
                        stage: self.stage.name().into(),
                        epoch,
                        detail: format!("non-finite parameters after step {step}"),
                    });
                }
                log.push(LogRecord::Step {
                    stage: self.stage.name(),
                    mode: self.mode,
                    epoch,
                    step,
                    lr,
                    task: loss.task,
                    mlm: loss.mlm,
                    kl: loss.kl,
                    smooth: loss.smooth,
                    total: loss.total,
                });
                step += 1;
            }
            let value = validate(&params)?;
            let improved = match (value, &best) {
                (_, None) | (None, _) => true,
                (Some(v), Some((_, b, _))) => {
                    if self.higher_is_better {
                        v > *b
                    } else {
                        v < *b
                    }
                }
            };
            let shown = value.unwrap_or(f64::NAN);
            log.push(LogRecord::Epoch {
                stage: self.stage.name(),
                mode: self.mode,
                epoch,
                metric: self.metric,
                value: if shown.is_nan() { 0.0 } else { shown },
                improved,
            });
            log::debug!(
                "{} {} epoch {epoch}: {} {shown:.4}",
                self.stage.name(),
                self.mode,
                self.metric
            );
            if improved {
                best = Some((epoch, value.unwrap_or(0.0), params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience.max(1) {
                    break;
                }
            }
        }
        let (best_epoch, best_metric, params) = best.expect("at least one epoch");
        Ok(StageResult {
            params,
            best_epoch,
            best_metric,
            epochs_run,
        })
    }
}

fn accuracy_validator(val: &TokenizedSplit) -> impl Fn(&ModelParams) -> Result<Option<f64>> + '_ {
    move |p| {
        if val.is_empty() {
            Ok(None)
        } else {
            validation_accuracy(p, val).map(Some)
        }
    }
}

/// Encoder plus linear head trained with cross-entropy.
pub fn stage1_finetune(
    params: ModelParams,
    train: &TokenizedSplit,
    val: &TokenizedSplit,
    config: &TrainConfig,
    mode: Mode,
    log: &mut Vec<LogRecord>,
    observer: &dyn BatchObserver,
) -> Result<StageResult> {
    let spec = LossSpec {
        task: TaskLoss::CrossEntropy,
        weights: LossWeights::ZERO,
        proxy_centroids: None,
    };
    let lp = Loop {
        stage: Stage::Stage1Ft,
        mode,
        tag: "stage1".into(),
        config,
        embedding_factor: 1.0,
        higher_is_better: true,
        metric: "accuracy",
    };
    lp.run(
        params,
        train,
        spec,
        |idx, _, _| {
            idx.iter()
                .map(|&i| Example::classify(train.tokens[i].clone(), train.labels[i]))
                .collect()
        },
        accuracy_validator(val),
        log,
        observer,
    )
}

/// Per-class keyword ids in vocabulary space.
pub fn class_keyword_ids(
    keywords: &KeywordTable,
    num_classes: usize,
    vocab: &crate::corpus::Vocabulary,
) -> Vec<Vec<TokenId>> {
    (0..num_classes)
        .map(|c| keywords.class_ids(c, vocab))
        .collect()
}

/// Masked-token retraining on keyword-masked inputs; early stopping on the
/// validation masked-token loss.
#[allow(clippy::too_many_arguments)]
pub fn stage2_semantic_mlm(
    params: ModelParams,
    class_keywords: &[Vec<TokenId>],
    train: &TokenizedSplit,
    val: &TokenizedSplit,
    config: &TrainConfig,
    mode: Mode,
    log: &mut Vec<LogRecord>,
    observer: &dyn BatchObserver,
) -> Result<StageResult> {
    let p = config.mlm_probability;
    let spec = LossSpec {
        task: TaskLoss::None,
        weights: LossWeights {
            lambda_mlm: 1.0,
            lambda_kl: 0.0,
            lambda_smooth: 0.0,
        },
        proxy_centroids: None,
    };
    let mut val_rng = seed::stream(config.seed, "stage2-validation");
    let val_examples: Vec<Example> = val
        .tokens
        .iter()
        .zip(&val.labels)
        .map(|(t, &l)| {
            let m = semantic_mask(t, &class_keywords[l], p, &mut val_rng);
            Example {
                tokens: m.tokens.clone(),
                label: l,
                mlm_targets: m.pairs(),
                task: false,
                kl: false,
                smooth: false,
                proxy: None,
            }
        })
        .collect();
    let lp = Loop {
        stage: Stage::Stage2Mlm,
        mode,
        tag: "stage2".into(),
        config,
        embedding_factor: 1.0,
        higher_is_better: false,
        metric: "masked_token_loss",
    };
    lp.run(
        params,
        train,
        spec,
        |idx, _, rng| {
            idx.iter()
                .map(|&i| {
                    let l = train.labels[i];
                    let m = semantic_mask(&train.tokens[i], &class_keywords[l], p, rng);
                    Example {
                        tokens: m.tokens.clone(),
                        label: l,
                        mlm_targets: m.pairs(),
                        task: false,
                        kl: false,
                        smooth: false,
                        proxy: None,
                    }
                })
                .collect()
        },
        |params| {
            if val_examples.is_empty() {
                return Ok(None);
            }
            evaluate_loss(params, &val_examples, &spec).map(|l| Some(l.mlm))
        },
        log,
        observer,
    )
}

/// Mean pooled embedding of each proxy's members under `params`.
pub fn refreshed_centroids(
    params: &ModelParams,
    proxies: &ProxySet,
    train: &TokenizedSplit,
) -> Result<Vec<Vec<f64>>> {
    let emb: Vec<Vec<f64>> = train
        .tokens
        .iter()
        .map(|t| embed(params, t))
        .collect::<Result<_>>()?;
    let d = params.d_model();
    Ok(proxies
        .proxies
        .iter()
        .map(|p| {
            let mut c = vec![0.0; d];
            for &m in &p.members {
                for (a, b) in c.iter_mut().zip(&emb[m]) {
                    *a += b;
                }
            }
            let n = p.members.len().max(1) as f64;
            c.iter_mut().for_each(|v| *v /= n);
            c
        })
        .collect())
}

/// The same proxies with centroids recomputed under `params`, so samples can
/// be assigned in that model's embedding space.
pub fn recenter_proxies(
    params: &ModelParams,
    proxies: &ProxySet,
    train: &TokenizedSplit,
) -> Result<ProxySet> {
    let centroids = refreshed_centroids(params, proxies, train)?;
    Ok(ProxySet {
        proxies: proxies
            .proxies
            .iter()
            .zip(centroids)
            .map(|(p, centroid)| crate::proxies::Proxy {
                centroid,
                ..p.clone()
            })
            .collect(),
        k_per_class: proxies.k_per_class.clone(),
    })
}

/// Multi-center head initialized at the normalized proxy centroids.
pub fn install_proxy_head(
    params: &mut ModelParams,
    proxies: &ProxySet,
    centroids: &[Vec<f64>],
    scale: f64,
) -> Result<()> {
    let mut per_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); params.num_classes];
    for (p, c) in proxies.proxies.iter().zip(centroids) {
        let n = l2_norm(c);
        if n == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "proxy {} has a zero centroid",
                p.id
            )));
        }
        per_class[p.class].push(c.iter().map(|v| v / n).collect());
    }
    if let Some(class) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::InvalidDataset(format!(
            "class {class} has no training samples, so it has no proxy"
        )));
    }
    params.install_softtriple(&per_class, scale)
}

/// Final fine-tuning for the masking and smoothing modes.
#[allow(clippy::too_many_arguments)]
pub fn stage3_finetune(
    mut params: ModelParams,
    mode: Mode,
    class_keywords: &[Vec<TokenId>],
    proxies: &ProxySet,
    train: &TokenizedSplit,
    val: &TokenizedSplit,
    config: &TrainConfig,
    log: &mut Vec<LogRecord>,
    observer: &dyn BatchObserver,
) -> Result<StageResult> {
    if mode == Mode::PlainFt {
        return Err(Error::InvalidConfig("plain_ft has no third stage".into()));
    }
    let centroids = refreshed_centroids(&params, proxies, train)?;
    let proxy_classes: Vec<usize> = proxies.proxies.iter().map(|p| p.class).collect();
    let mut weights = config.losses;
    let task = if mode.uses_softtriple() {
        install_proxy_head(
            &mut params,
            proxies,
            &centroids,
            config.softtriple.lambda_scale,
        )?;
        TaskLoss::SoftTriple(config.softtriple)
    } else {
        params.remove_softtriple();
        TaskLoss::CrossEntropy
    };
    match mode {
        Mode::MaskOnly => weights.lambda_smooth = 0.0,
        Mode::SmoothOnly => {
            weights.lambda_mlm = 0.0;
            weights.lambda_kl = 0.0;
        }
        _ => {}
    }
    let mut fixed = vec![None; train.len()];
    if config.freeze_proxy_membership {
        for p in &proxies.proxies {
            for &m in &p.members {
                fixed[m] = Some(p.id);
            }
        }
    }
    let spec = LossSpec {
        task,
        weights,
        proxy_centroids: Some(ProxyCentroids {
            centroids: &centroids,
            classes: &proxy_classes,
        }),
    };
    let smooth = weights.lambda_smooth > 0.0;
    let p = config.mlm_probability;
    let fraction = config.context_mask_fraction;
    let view = config.task_view;
    // masking modes validate on the view they train on: every keyword masked
    let val_view = if mode.uses_masking() {
        let all: Vec<TokenId> = class_keywords.iter().flatten().copied().collect();
        TokenizedSplit {
            tokens: val.tokens.iter().map(|t| mask_keywords(t, &all)).collect(),
            ..val.clone()
        }
    } else {
        val.clone()
    };
    let lp = Loop {
        stage: Stage::Stage3Ufit,
        mode,
        tag: format!("stage3-{}", mode.name()),
        config,
        embedding_factor: config.embedding_lr_factor,
        higher_is_better: true,
        metric: "accuracy",
    };
    lp.run(
        params,
        train,
        spec,
        |idx, _, rng| {
            let mut out = Vec::with_capacity(idx.len() * 2);
            if !mode.uses_masking() {
                for &i in idx {
                    out.push(Example {
                        smooth,
                        proxy: fixed[i],
                        ..Example::classify(train.tokens[i].clone(), train.labels[i])
                    });
                }
                return out;
            }
            let n_ctx =
                (seed::round_half_away(fraction * idx.len() as f64) as usize).min(idx.len());
            let mut slots: Vec<usize> = (0..idx.len()).collect();
            let (ctx_slots, _) = slots.partial_shuffle(rng, n_ctx);
            let mut is_ctx = vec![false; idx.len()];
            for &s in ctx_slots.iter() {
                is_ctx[s] = true;
            }
            for (slot, &i) in idx.iter().enumerate() {
                let label = train.labels[i];
                let kw = &class_keywords[label];
                let m = semantic_mask(&train.tokens[i], kw, p, rng);
                let mlm_targets = if is_ctx[slot] { Vec::new() } else { m.pairs() };
                match view {
                    TaskView::Semantic => out.push(Example {
                        tokens: m.tokens.clone(),
                        label,
                        mlm_targets,
                        task: true,
                        kl: false,
                        smooth,
                        proxy: fixed[i],
                    }),
                    TaskView::Original => {
                        out.push(Example {
                            smooth,
                            proxy: fixed[i],
                            ..Example::classify(train.tokens[i].clone(), label)
                        });
                        if !mlm_targets.is_empty() {
                            out.push(Example {
                                tokens: m.tokens.clone(),
                                label,
                                mlm_targets,
                                task: false,
                                kl: false,
                                smooth: false,
                                proxy: None,
                            });
                        }
                    }
                }
                if is_ctx[slot] {
                    out.push(Example {
                        tokens: context_mask(&train.tokens[i], kw),
                        label,
                        mlm_targets: Vec::new(),
                        task: false,
                        kl: true,
                        smooth: false,
                        proxy: None,
                    });
                }
            }
            out
        },
        accuracy_validator(&val_view),
        log,
        observer,
    )
}
