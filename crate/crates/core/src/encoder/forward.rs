use crate::corpus::{TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, matmul, softmax};

use super::params::{HeadKind, ModelParams};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU; returns `(value, derivative)`.
#[inline]
pub(crate) fn gelu(u: f64) -> (f64, f64) {
    let inner = GELU_C * (u + 0.044715 * u * u * u);
    let t = inner.tanh();
    let value = 0.5 * u * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u);
    (value, deriv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// Final hidden states, `len × d`, row-major.
    pub hidden: Vec<f64>,
    pub pooled: Vec<f64>,
    /// Final-layer attention from the CLS query to every token, averaged
    /// over heads; sums to 1.
    pub attention: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub class_probs: Vec<f64>,
    /// Vocabulary logits at the requested positions, in request order.
    pub mlm_logits: Vec<Vec<f64>>,
}

pub(super) struct BlockTrace {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Per head, `len × len` attention probabilities.
    pub probs: Vec<Vec<f64>>,
    pub ctx: Vec<f64>,
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
}

pub(super) struct HeadTrace {
    /// `x / ‖x‖` for the multi-center head.
    pub unit: Vec<f64>,
    pub norm: f64,
    /// Per class, inner products with its centers.
    pub products: Vec<Vec<f64>>,
    pub sims: Vec<f64>,
}

pub(super) struct Trace {
    pub tokens: Vec<u32>,
    pub blocks: Vec<BlockTrace>,
    pub hidden: Vec<f64>,
    pub head: Option<HeadTrace>,
    pub class_logits: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn pooled(&self, d: usize) -> &[f64] {
        &self.hidden[..d]
    }
}

fn check(params: &ModelParams, seq: &TokenSeq) -> Result<()> {
    if seq.ids.is_empty() {
        return Err(Error::DimensionMismatch("empty token sequence".into()));
    }
    if seq.ids.len() > params.config.max_len {
        return Err(Error::DimensionMismatch(format!(
            "sequence of {} tokens exceeds max_len {}",
            seq.ids.len(),
            params.config.max_len
        )));
    }
    if let Some(&bad) = seq.ids.iter().find(|&&t| t as usize >= params.vocab_size) {
        return Err(Error::DimensionMismatch(format!(
            "token id {bad} outside vocabulary of {}",
            params.vocab_size
        )));
    }
    Ok(())
}

pub(super) fn run(params: &ModelParams, seq: &TokenSeq) -> Result<Trace> {
    check(params, seq)?;
    let d = params.d_model();
    let n_heads = params.config.heads;
    let dh = d / n_heads;
    let f = params.config.ff_width;
    let scale = 1.0 / (dh as f64).sqrt();
    let len = seq.ids.len();

    let mut x = vec![0.0; len * d];
    for (i, &t) in seq.ids.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        for ((r, a), b) in row
            .iter_mut()
            .zip(params.tok_emb.row(t as usize))
            .zip(params.pos_emb.row(i))
        {
            *r = a + b;
        }
    }
    let live: Vec<bool> = seq.ids.iter().map(|&t| t != Vocabulary::PAD).collect();

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for blk in &params.blocks {
        let q = matmul(&x, &blk.wq.data, len, d, d);
        let k = matmul(&x, &blk.wk.data, len, d, d);
        let v = matmul(&x, &blk.wv.data, len, d, d);
        let mut ctx = vec![0.0; len * d];
        let mut probs = Vec::with_capacity(n_heads);
        for hd in 0..n_heads {
            let cols = hd * dh..(hd + 1) * dh;
            let mut p = vec![0.0; len * len];
            for i in 0..len {
                let qi = &q[i * d..(i + 1) * d][cols.clone()];
                let scores: Vec<f64> = (0..len)
                    .map(|j| {
                        if live[j] {
                            scale * dot(qi, &k[j * d..(j + 1) * d][cols.clone()])
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let row = softmax(&scores);
                for j in 0..len {
                    let pij = row[j];
                    if pij != 0.0 {
                        let vj = &v[j * d..(j + 1) * d][cols.clone()];
                        let out = &mut ctx[i * d..(i + 1) * d][cols.clone()];
                        for (o, vv) in out.iter_mut().zip(vj) {
                            *o += pij * vv;
                        }
                    }
                }
                p[i * len..(i + 1) * len].copy_from_slice(&row);
            }
            probs.push(p);
        }
        let a = matmul(&ctx, &blk.wo.data, len, d, d);
        let h: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + a).collect();
        let mut u = matmul(&h, &blk.w1.data, len, d, f);
        for row in u.chunks_mut(f) {
            for (val, b) in row.iter_mut().zip(&blk.b1) {
                *val += b;
            }
        }
        let g: Vec<f64> = u.iter().map(|&v| gelu(v).0).collect();
        let ff = matmul(&g, &blk.w2.data, len, f, d);
        let mut y = h.clone();
        for (i, row) in y.chunks_mut(d).enumerate() {
            for c in 0..d {
                row[c] += ff[i * d + c] + blk.b2[c];
            }
        }
        blocks.push(BlockTrace {
            x: std::mem::replace(&mut x, y),
            q,
            k,
            v,
            probs,
            ctx,
            h,
            u,
            g,
        });
    }

    let pooled = &x[..d];
    let (head, class_logits) = match params.head {
        HeadKind::Linear => {
            let mut z = params.cls_b.clone();
            for (i, &p) in pooled.iter().enumerate() {
                for (zc, w) in z.iter_mut().zip(params.cls_w.row(i)) {
                    *zc += p * w;
                }
            }
            (None, z)
        }
        HeadKind::SoftTriple { scale } => {
            let norm = l2_norm(pooled).max(1e-12);
            let unit: Vec<f64> = pooled.iter().map(|v| v / norm).collect();
            let offsets = params.proxy_offsets();
            let products: Vec<Vec<f64>> = offsets
                .iter()
                .zip(&params.proxies_per_class)
                .map(|(&o, &kc)| {
                    (o..o + kc)
                        .map(|r| dot(&unit, params.proxy_w.row(r)))
                        .collect()
                })
                .collect();
            let sims: Vec<f64> = products
                .iter()
                .map(|ips| crate::losses::similarity_from_products(ips))
                .collect();
            let z = sims.iter().map(|s| scale * s).collect();
            (
                Some(HeadTrace {
                    unit,
                    norm,
                    products,
                    sims,
                }),
                z,
            )
        }
    };

    Ok(Trace {
        tokens: seq.ids.clone(),
        blocks,
        hidden: x,
        head,
        class_logits,
    })
}

pub(super) fn mlm_logits(params: &ModelParams, hidden_row: &[f64]) -> Vec<f64> {
    let mut z = params.mlm_b.clone();
    for (i, &h) in hidden_row.iter().enumerate() {
        if h != 0.0 {
            for (zc, w) in z.iter_mut().zip(params.mlm_w.row(i)) {
                *zc += h * w;
            }
        }
    }
    z
}

fn output(params: &ModelParams, trace: Trace, positions: &[usize]) -> Result<EncoderOutput> {
    let d = params.d_model();
    let len = trace.len();
    let last = trace.blocks.last().expect("at least one block");
    let n_heads = last.probs.len();
    let mut attention = vec![0.0; len];
    for p in &last.probs {
        for (a, v) in attention.iter_mut().zip(&p[..len]) {
            *a += v / n_heads as f64;
        }
    }
    let mut mlm = Vec::with_capacity(positions.len());
    for &pos in positions {
        if pos >= len {
            return Err(Error::DimensionMismatch(format!(
                "masked position {pos} beyond sequence length {len}"
            )));
        }
        mlm.push(mlm_logits(params, &trace.hidden[pos * d..(pos + 1) * d]));
    }
    Ok(EncoderOutput {
        pooled: trace.hidden[..d].to_vec(),
        class_probs: softmax(&trace.class_logits),
        class_logits: trace.class_logits,
        hidden: trace.hidden,
        attention,
        mlm_logits: mlm,
    })
}

/// Runs every sequence independently; `mask_positions[i]` lists the
/// positions of sample `i` that need vocabulary logits.
pub fn forward(
    params: &ModelParams,
    batch: &[TokenSeq],
    mask_positions: Option<&[Vec<usize>]>,
) -> Result<Vec<EncoderOutput>> {
    if let Some(m) = mask_positions {
        if m.len() != batch.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} mask lists for a batch of {}",
                m.len(),
                batch.len()
            )));
        }
    }
    batch
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let positions = mask_positions.map_or(&[][..], |m| m[i].as_slice());
            output(params, run(params, seq)?, positions)
        })
        .collect()
}

/// Argmax class of every sequence (ties to the lower class).
pub fn predict(params: &ModelParams, batch: &[TokenSeq]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|s| run(params, s).map(|t| crate::linalg::argmax(&t.class_logits)))
        .collect()
}

/// Pooled (CLS) embedding of one sequence.
pub fn embed(params: &ModelParams, seq: &TokenSeq) -> Result<Vec<f64>> {
    let trace = run(params, seq)?;
    Ok(trace.pooled(params.d_model()).to_vec())
}
