use crate::corpus::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::linalg::{add_at_b, matmul_bt, softmax, squared_distance};
use crate::losses::{self, LossWeights, SoftTripleParams};

use super::forward::{gelu, mlm_logits, run, Trace};
use super::params::{HeadKind, ModelParams, TensorGroup};

/// One training input with the loss terms it takes part in.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: TokenSeq,
    pub label: usize,
    /// `(position, original token)` for every masked position.
    pub mlm_targets: Vec<(usize, TokenId)>,
    pub task: bool,
    pub kl: bool,
    pub smooth: bool,
    /// Proxy for the smoothing term; when absent the nearest centroid of
    /// the current pooled embedding is used.
    pub proxy: Option<usize>,
}

impl Example {
    pub fn classify(tokens: TokenSeq, label: usize) -> Self {
        Self {
            tokens,
            label,
            mlm_targets: Vec::new(),
            task: true,
            kl: false,
            smooth: false,
            proxy: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskLoss {
    None,
    CrossEntropy,
    SoftTriple(SoftTripleParams),
}

#[derive(Clone, Copy, Debug)]
pub struct LossSpec<'a> {
    pub task: TaskLoss,
    pub weights: LossWeights,
    pub proxy_centroids: Option<ProxyCentroids<'a>>,
}

/// Proxy centers for per-batch assignment; a sample is assigned to the
/// nearest center among the proxies of its own class.
#[derive(Clone, Copy, Debug)]
pub struct ProxyCentroids<'a> {
    pub centroids: &'a [Vec<f64>],
    pub classes: &'a [usize],
}

/// Term values; a term whose weight is zero is neither computed nor
/// differentiated and reads 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub mlm: f64,
    pub kl: f64,
    pub smooth: f64,
    pub total: f64,
}

/// Gradients shaped exactly like the parameters they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet(pub ModelParams);

impl GradientSet {
    pub fn zeros(params: &ModelParams) -> Self {
        Self(params.zeros_like())
    }

    pub fn tensors(&self) -> Vec<(TensorGroup, &[f64])> {
        self.0.tensors()
    }

    pub fn add(&mut self, other: &GradientSet) {
        for ((_, a), (_, b)) in self.0.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

struct HeadGrad {
    dlogits: Vec<f64>,
    dsims: Vec<f64>,
    /// `(position, dL/dhidden)` from the masked-token head.
    dhidden: Vec<(usize, Vec<f64>)>,
}

fn nearest(proxies: &ProxyCentroids, class: usize, x: &[f64]) -> Option<usize> {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (i, c) in proxies.centroids.iter().enumerate() {
        if proxies.classes[i] != class {
            continue;
        }
        let d = squared_distance(c, x);
        if d < best_d {
            best = Some(i);
            best_d = d;
        }
    }
    best
}

fn compute(
    params: &ModelParams,
    examples: &[Example],
    spec: &LossSpec,
    grads: Option<&mut GradientSet>,
) -> Result<LossBreakdown> {
    let d = params.d_model();
    let c = params.num_classes;
    let w = spec.weights;
    w.validate()?;
    if matches!(spec.task, TaskLoss::SoftTriple(_)) && params.head == HeadKind::Linear {
        return Err(Error::InvalidConfig(
            "softtriple task loss needs the multi-center head".into(),
        ));
    }
    for e in examples {
        if e.label >= c {
            return Err(Error::DimensionMismatch(format!(
                "label {} with {c} classes",
                e.label
            )));
        }
    }
    let traces: Vec<Trace> = examples
        .iter()
        .map(|e| run(params, &e.tokens))
        .collect::<Result<_>>()?;

    let use_task = spec.task != TaskLoss::None;
    let use_mlm = w.lambda_mlm > 0.0;
    let use_kl = w.lambda_kl > 0.0;
    let use_smooth = w.lambda_smooth > 0.0;
    let n_task = examples.iter().filter(|e| e.task).count().max(1) as f64;
    let n_mlm = examples
        .iter()
        .map(|e| e.mlm_targets.len())
        .sum::<usize>()
        .max(1) as f64;
    let n_kl = examples.iter().filter(|e| e.kl).count().max(1) as f64;

    let mut out = LossBreakdown::default();
    let want = grads.is_some();
    let mut grads = grads;
    let mut heads: Vec<HeadGrad> = traces
        .iter()
        .map(|_| HeadGrad {
            dlogits: vec![0.0; c],
            dsims: vec![0.0; c],
            dhidden: Vec::new(),
        })
        .collect();

    for (i, (e, t)) in examples.iter().zip(&traces).enumerate() {
        let hg = &mut heads[i];
        if use_task && e.task {
            match spec.task {
                TaskLoss::CrossEntropy => {
                    out.task += losses::cross_entropy(&t.class_logits, e.label) / n_task;
                    if want {
                        let g = losses::cross_entropy_grad(&t.class_logits, e.label);
                        for (a, b) in hg.dlogits.iter_mut().zip(g) {
                            *a += b / n_task;
                        }
                    }
                }
                TaskLoss::SoftTriple(st) => {
                    let sims = &t.head.as_ref().expect("softtriple head").sims;
                    out.task += losses::softtriple_loss(sims, e.label, &st) / n_task;
                    if want {
                        let g = losses::softtriple_grad(sims, e.label, &st);
                        for (a, b) in hg.dsims.iter_mut().zip(g) {
                            *a += b / n_task;
                        }
                    }
                }
                TaskLoss::None => {}
            }
        }
        if use_kl && e.kl {
            let probs = softmax(&t.class_logits);
            out.kl += losses::kl_uniform_loss(&probs) / n_kl;
            if want {
                let g = losses::kl_uniform_grad_logits(&probs);
                for (a, b) in hg.dlogits.iter_mut().zip(g) {
                    *a += w.lambda_kl * b / n_kl;
                }
            }
        }
        if use_mlm {
            for &(pos, target) in &e.mlm_targets {
                if pos >= t.len() || target as usize >= params.vocab_size {
                    return Err(Error::DimensionMismatch(format!(
                        "masked target ({pos}, {target}) outside the sequence or vocabulary"
                    )));
                }
                let h = &t.hidden[pos * d..(pos + 1) * d];
                let z = mlm_logits(params, h);
                out.mlm += losses::cross_entropy(&z, target as usize) / n_mlm;
                if let Some(g) = grads.as_deref_mut() {
                    let mut dz = losses::cross_entropy_grad(&z, target as usize);
                    dz.iter_mut().for_each(|v| *v *= w.lambda_mlm / n_mlm);
                    add_at_b(h, &dz, 1, d, params.vocab_size, &mut g.0.mlm_w.data);
                    for (b, v) in g.0.mlm_b.iter_mut().zip(&dz) {
                        *b += v;
                    }
                    let dh = matmul_bt(&dz, &params.mlm_w.data, 1, params.vocab_size, d);
                    hg.dhidden.push((pos, dh));
                }
            }
        }
    }

    if use_smooth {
        let members: Vec<usize> = (0..examples.len())
            .filter(|&i| examples[i].smooth)
            .collect();
        if !members.is_empty() {
            let mut ids = Vec::with_capacity(members.len());
            for &i in &members {
                let id = match (examples[i].proxy, &spec.proxy_centroids) {
                    (Some(p), _) => Some(p),
                    (None, Some(pc)) => nearest(pc, examples[i].label, traces[i].pooled(d)),
                    _ => None,
                };
                let Some(id) = id else {
                    return Err(Error::InvalidConfig(format!(
                        "smoothing needs a proxy for class {}",
                        examples[i].label
                    )));
                };
                ids.push(id);
            }
            let probs: Vec<Vec<f64>> = members
                .iter()
                .map(|&i| softmax(&traces[i].class_logits))
                .collect();
            out.smooth = losses::intra_proxy_smooth_loss(&probs, &ids);
            if want {
                let g = losses::intra_proxy_smooth_grad(&probs, &ids);
                for ((&i, p), gp) in members.iter().zip(&probs).zip(g) {
                    let dz = losses::softmax_backward(p, &gp);
                    for (a, b) in heads[i].dlogits.iter_mut().zip(dz) {
                        *a += w.lambda_smooth * b;
                    }
                }
            }
        }
    }

    out.total = losses::total_loss(
        losses::ft_loss(out.task, out.mlm, out.kl, &w),
        out.smooth,
        &w,
    );
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "task {} mlm {} kl {} smooth {}",
            out.task, out.mlm, out.kl, out.smooth
        )));
    }

    if let Some(g) = grads {
        for (t, hg) in traces.iter().zip(&heads) {
            backprop(params, t, hg, g);
        }
    }
    Ok(out)
}

fn backprop(params: &ModelParams, t: &Trace, hg: &HeadGrad, g: &mut GradientSet) {
    let d = params.d_model();
    let len = t.len();
    let mut dy = vec![0.0; len * d];
    for (pos, dh) in &hg.dhidden {
        for (a, b) in dy[pos * d..(pos + 1) * d].iter_mut().zip(dh) {
            *a += b;
        }
    }

    let pooled = t.pooled(d);
    let dpooled = &mut dy[..d];
    match params.head {
        HeadKind::Linear => {
            if hg.dlogits.iter().any(|v| *v != 0.0) {
                add_at_b(
                    pooled,
                    &hg.dlogits,
                    1,
                    d,
                    params.num_classes,
                    &mut g.0.cls_w.data,
                );
                for (b, v) in g.0.cls_b.iter_mut().zip(&hg.dlogits) {
                    *b += v;
                }
                let dp = matmul_bt(&hg.dlogits, &params.cls_w.data, 1, params.num_classes, d);
                for (a, b) in dpooled.iter_mut().zip(dp) {
                    *a += b;
                }
            }
        }
        HeadKind::SoftTriple { scale } => {
            let ht = t.head.as_ref().expect("softtriple trace");
            let mut dunit = vec![0.0; d];
            for (class, &offset) in params.proxy_offsets().iter().enumerate() {
                let ds = scale * hg.dlogits[class] + hg.dsims[class];
                if ds == 0.0 {
                    continue;
                }
                let ga = losses::similarity_grad(&ht.products[class]);
                for (j, gj) in ga.iter().enumerate() {
                    let dip = ds * gj;
                    let row = offset + j;
                    for (a, u) in g.0.proxy_w.row_mut(row).iter_mut().zip(&ht.unit) {
                        *a += dip * u;
                    }
                    for (a, wv) in dunit.iter_mut().zip(params.proxy_w.row(row)) {
                        *a += dip * wv;
                    }
                }
            }
            let radial: f64 = ht.unit.iter().zip(&dunit).map(|(u, v)| u * v).sum();
            for ((a, du), u) in dpooled.iter_mut().zip(&dunit).zip(&ht.unit) {
                *a += (du - u * radial) / ht.norm;
            }
        }
    }

    if dy.iter().all(|v| *v == 0.0) {
        return;
    }

    let n_heads = params.config.heads;
    let dh_width = d / n_heads;
    let scale = 1.0 / (dh_width as f64).sqrt();
    let f = params.config.ff_width;
    for (bi, bt) in t.blocks.iter().enumerate().rev() {
        let blk = &params.blocks[bi];
        let gb = &mut g.0.blocks[bi];

        for row in dy.chunks(d) {
            for (b, v) in gb.b2.iter_mut().zip(row) {
                *b += v;
            }
        }
        add_at_b(&bt.g, &dy, len, f, d, &mut gb.w2.data);
        let dg = matmul_bt(&dy, &blk.w2.data, len, d, f);
        let du: Vec<f64> = dg.iter().zip(&bt.u).map(|(a, &u)| a * gelu(u).1).collect();
        add_at_b(&bt.h, &du, len, d, f, &mut gb.w1.data);
        for row in du.chunks(f) {
            for (b, v) in gb.b1.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut dh = matmul_bt(&du, &blk.w1.data, len, f, d);
        for (a, b) in dh.iter_mut().zip(&dy) {
            *a += b;
        }

        add_at_b(&bt.ctx, &dh, len, d, d, &mut gb.wo.data);
        let dctx = matmul_bt(&dh, &blk.wo.data, len, d, d);
        let mut dq = vec![0.0; len * d];
        let mut dk = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        for (hd, p) in bt.probs.iter().enumerate() {
            let cols = hd * dh_width..(hd + 1) * dh_width;
            for i in 0..len {
                let dci = &dctx[i * d..(i + 1) * d][cols.clone()];
                let prow = &p[i * len..(i + 1) * len];
                let mut dp = vec![0.0; len];
                for j in 0..len {
                    let pij = prow[j];
                    if pij == 0.0 {
                        continue;
                    }
                    let vj = &bt.v[j * d..(j + 1) * d][cols.clone()];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    for (o, x) in dv[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(dci) {
                        *o += pij * x;
                    }
                }
                let inner: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..len {
                    let pij = prow[j];
                    if pij == 0.0 {
                        continue;
                    }
                    let ds = scale * pij * (dp[j] - inner);
                    for c in cols.clone() {
                        dq[i * d + c] += ds * bt.k[j * d + c];
                        dk[j * d + c] += ds * bt.q[i * d + c];
                    }
                }
            }
        }
        add_at_b(&bt.x, &dq, len, d, d, &mut gb.wq.data);
        add_at_b(&bt.x, &dk, len, d, d, &mut gb.wk.data);
        add_at_b(&bt.x, &dv, len, d, d, &mut gb.wv.data);
        let mut dx = dh;
        for (grad, w) in [(&dq, &blk.wq), (&dk, &blk.wk), (&dv, &blk.wv)] {
            let back = matmul_bt(grad, &w.data, len, d, d);
            for (a, b) in dx.iter_mut().zip(back) {
                *a += b;
            }
        }
        dy = dx;
    }

    for (i, &tok) in t.tokens.iter().enumerate() {
        let row = &dy[i * d..(i + 1) * d];
        for (a, b) in g.0.tok_emb.row_mut(tok as usize).iter_mut().zip(row) {
            *a += b;
        }
        for (a, b) in g.0.pos_emb.row_mut(i).iter_mut().zip(row) {
            *a += b;
        }
    }
}

/// Loss value only.
pub fn evaluate_loss(
    params: &ModelParams,
    examples: &[Example],
    spec: &LossSpec,
) -> Result<LossBreakdown> {
    compute(params, examples, spec, None)
}

/// Loss value and its exact gradient with respect to every parameter.
pub fn backward(
    params: &ModelParams,
    examples: &[Example],
    spec: &LossSpec,
) -> Result<(LossBreakdown, GradientSet)> {
    let mut g = GradientSet::zeros(params);
    let loss = compute(params, examples, spec, Some(&mut g))?;
    Ok((loss, g))
}
