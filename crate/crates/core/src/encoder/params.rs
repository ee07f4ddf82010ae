use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_model")]
    pub d_model: usize,
    #[serde(default = "heads")]
    pub heads: usize,
    #[serde(default = "ff_width")]
    pub ff_width: usize,
    #[serde(default = "blocks")]
    pub blocks: usize,
    #[serde(default = "max_len")]
    pub max_len: usize,
    /// Weights start uniform in `(-init_scale, init_scale)`; biases at 0.
    #[serde(default = "init_scale")]
    pub init_scale: f64,
}

fn d_model() -> usize {
    32
}
fn heads() -> usize {
    2
}
fn ff_width() -> usize {
    64
}
fn blocks() -> usize {
    2
}
fn max_len() -> usize {
    crate::corpus::DEFAULT_MAX_LEN
}
fn init_scale() -> f64 {
    0.05
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: d_model(),
            heads: heads(),
            ff_width: ff_width(),
            blocks: blocks(),
            max_len: max_len(),
            init_scale: init_scale(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.ff_width == 0 || self.blocks == 0 || self.max_len < 2 {
            return Err(Error::InvalidConfig(
                "ff_width and blocks must be positive and max_len at least 2".into(),
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::InvalidConfig("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One attention block: projections are `d×d` without bias, the
/// feed-forward is `d→ff→d` with biases. Weights are stored `in×out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    /// Class logits are `scale · S_c` over the proxy centers of class `c`.
    SoftTriple {
        scale: f64,
    },
}

/// Which optimizer group a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorGroup {
    Embedding,
    Encoder,
    MlmHead,
    ClassHead,
    Proxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub blocks: Vec<Block>,
    pub mlm_w: Matrix,
    pub mlm_b: Vec<f64>,
    pub cls_w: Matrix,
    pub cls_b: Vec<f64>,
    /// SoftTriple centers, one row per proxy, grouped by class.
    pub proxy_w: Matrix,
    pub proxies_per_class: Vec<usize>,
    pub head: HeadKind,
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        vocab_size: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(config, vocab_size, num_classes)?;
        let s = config.init_scale;
        let mut fill = |m: &mut Matrix| {
            *m = Matrix::uniform(m.rows, m.cols, s, rng);
        };
        fill(&mut p.tok_emb);
        fill(&mut p.pos_emb);
        for b in &mut p.blocks {
            fill(&mut b.wq);
            fill(&mut b.wk);
            fill(&mut b.wv);
            fill(&mut b.wo);
            fill(&mut b.w1);
            fill(&mut b.w2);
        }
        fill(&mut p.mlm_w);
        fill(&mut p.cls_w);
        Ok(p)
    }

    /// All-zero parameters with a linear head.
    pub fn zeros(config: &ModelConfig, vocab_size: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size <= crate::corpus::Vocabulary::RESERVED.len() || num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "model needs a vocabulary beyond the reserved ids and C >= 2 (got V={vocab_size}, C={num_classes})"
            )));
        }
        let (d, f) = (config.d_model, config.ff_width);
        let blocks = (0..config.blocks)
            .map(|_| Block {
                wq: Matrix::zeros(d, d),
                wk: Matrix::zeros(d, d),
                wv: Matrix::zeros(d, d),
                wo: Matrix::zeros(d, d),
                w1: Matrix::zeros(d, f),
                b1: vec![0.0; f],
                w2: Matrix::zeros(f, d),
                b2: vec![0.0; d],
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            vocab_size,
            num_classes,
            tok_emb: Matrix::zeros(vocab_size, d),
            pos_emb: Matrix::zeros(config.max_len, d),
            blocks,
            mlm_w: Matrix::zeros(d, vocab_size),
            mlm_b: vec![0.0; vocab_size],
            cls_w: Matrix::zeros(d, num_classes),
            cls_b: vec![0.0; num_classes],
            proxy_w: Matrix::zeros(0, d),
            proxies_per_class: vec![0; num_classes],
            head: HeadKind::Linear,
        })
    }

    /// Back to the linear head, dropping any multi-center weights.
    pub fn remove_softtriple(&mut self) {
        self.proxy_w = Matrix::zeros(0, self.d_model());
        self.proxies_per_class = vec![0; self.num_classes];
        self.head = HeadKind::Linear;
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Switches classification to the multi-center head with the given
    /// centers (one list per class); rows are unit-normalized.
    pub fn install_softtriple(&mut self, centers: &[Vec<Vec<f64>>], scale: f64) -> Result<()> {
        let d = self.d_model();
        if centers.len() != self.num_classes || centers.iter().any(|c| c.is_empty()) {
            return Err(Error::DimensionMismatch(format!(
                "need at least one center for each of {} classes",
                self.num_classes
            )));
        }
        let mut w = Matrix::zeros(centers.iter().map(Vec::len).sum(), d);
        let mut r = 0;
        for class in centers {
            for c in class {
                if c.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "center has {} dims, model has {d}",
                        c.len()
                    )));
                }
                w.row_mut(r).copy_from_slice(c);
                r += 1;
            }
        }
        self.proxy_w = w;
        self.proxies_per_class = centers.iter().map(Vec::len).collect();
        self.head = HeadKind::SoftTriple { scale };
        self.normalize_proxies();
        Ok(())
    }

    /// First row of each class's block in `proxy_w`.
    pub fn proxy_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.proxies_per_class
            .iter()
            .map(|&k| {
                let o = acc;
                acc += k;
                o
            })
            .collect()
    }

    pub fn normalize_proxies(&mut self) {
        for r in 0..self.proxy_w.rows {
            let row = self.proxy_w.row_mut(r);
            let n = l2_norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub fn tensors(&self) -> Vec<(TensorGroup, &[f64])> {
        use TensorGroup::*;
        let mut out: Vec<(TensorGroup, &[f64])> = vec![
            (Embedding, &self.tok_emb.data),
            (Embedding, &self.pos_emb.data),
        ];
        for b in &self.blocks {
            out.extend([
                (Encoder, b.wq.data.as_slice()),
                (Encoder, &b.wk.data),
                (Encoder, &b.wv.data),
                (Encoder, &b.wo.data),
                (Encoder, &b.w1.data),
                (Encoder, &b.b1),
                (Encoder, &b.w2.data),
                (Encoder, &b.b2),
            ]);
        }
        out.extend([
            (MlmHead, self.mlm_w.data.as_slice()),
            (MlmHead, &self.mlm_b),
            (ClassHead, &self.cls_w.data),
            (ClassHead, &self.cls_b),
            (Proxy, &self.proxy_w.data),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorGroup, &mut [f64])> {
        use TensorGroup::*;
        let mut out: Vec<(TensorGroup, &mut [f64])> = vec![
            (Embedding, &mut self.tok_emb.data),
            (Embedding, &mut self.pos_emb.data),
        ];
        for b in &mut self.blocks {
            out.extend([
                (Encoder, b.wq.data.as_mut_slice()),
                (Encoder, &mut b.wk.data),
                (Encoder, &mut b.wv.data),
                (Encoder, &mut b.wo.data),
                (Encoder, &mut b.w1.data),
                (Encoder, &mut b.b1),
                (Encoder, &mut b.w2.data),
                (Encoder, &mut b.b2),
            ]);
        }
        out.extend([
            (MlmHead, self.mlm_w.data.as_mut_slice()),
            (MlmHead, &mut self.mlm_b),
            (ClassHead, &mut self.cls_w.data),
            (ClassHead, &mut self.cls_b),
            (Proxy, &mut self.proxy_w.data),
        ]);
        out
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}
