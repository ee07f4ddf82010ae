//! Checkpoint files: magic, format version, a JSON header and the raw
//! little-endian `f64` tensors in parameter order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use crate::corpus::Vocabulary;
use crate::encoder::{HeadKind, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::masking::KeywordTable;
use crate::proxies::ProxySet;

const MAGIC: &[u8; 8] = b"UFTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "STAGE1_FT")]
    Stage1Ft,
    #[serde(rename = "STAGE2_MLM")]
    Stage2Mlm,
    #[serde(rename = "STAGE3_UFIT")]
    Stage3Ufit,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Stage1Ft => "stage1",
            Stage::Stage2Mlm => "stage2",
            Stage::Stage3Ufit => "stage3",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub mode: Mode,
    /// Epoch whose parameters were kept (1-based).
    pub epoch: usize,
    /// Accuracy for classification stages, masked-token loss for stage 2.
    pub validation_metric: f64,
    pub vocab_hash: String,
    pub params: ModelParams,
    pub keywords: Option<KeywordTable>,
    pub proxies: Option<ProxySet>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    stage: Stage,
    mode: Mode,
    epoch: usize,
    validation_metric: f64,
    vocab_hash: String,
    model: ModelConfig,
    vocab_size: usize,
    num_classes: usize,
    head: HeadKind,
    proxies_per_class: Vec<usize>,
    tensor_lengths: Vec<usize>,
    keywords: Option<KeywordTable>,
    proxies: Option<ProxySet>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let header = Header {
            version: FORMAT_VERSION,
            stage: self.stage,
            mode: self.mode,
            epoch: self.epoch,
            validation_metric: self.validation_metric,
            vocab_hash: self.vocab_hash.clone(),
            model: p.config.clone(),
            vocab_size: p.vocab_size,
            num_classes: p.num_classes,
            head: p.head,
            proxies_per_class: p.proxies_per_class.clone(),
            tensor_lengths: p.tensors().iter().map(|(_, t)| t.len()).collect(),
            keywords: self.keywords.clone(),
            proxies: self.proxies.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * p.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in p.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated file".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        r = &r[len..];

        let mut params = ModelParams::zeros(&header.model, header.vocab_size, header.num_classes)?;
        let proxies: usize = header.proxies_per_class.iter().sum();
        params.proxy_w = Matrix::zeros(proxies, header.model.d_model);
        params.proxies_per_class = header.proxies_per_class;
        params.head = header.head;
        let lengths: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        if lengths != header.tensor_lengths {
            return Err(Error::Checkpoint(
                "tensor shapes disagree with the header".into(),
            ));
        }
        if r.len() != 8 * lengths.iter().sum::<usize>() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensor bytes, found {}",
                8 * lengths.iter().sum::<usize>(),
                r.len()
            )));
        }
        for (_, t) in params.tensors_mut() {
            for v in t.iter_mut() {
                let (head, tail) = r.split_at(8);
                *v = f64::from_le_bytes(head.try_into().expect("8 bytes"));
                r = tail;
            }
        }
        Ok(Checkpoint {
            stage: header.stage,
            mode: header.mode,
            epoch: header.epoch,
            validation_metric: header.validation_metric,
            vocab_hash: header.vocab_hash,
            params,
            keywords: header.keywords,
            proxies: header.proxies,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    /// Loads and checks that the checkpoint was trained on `vocab`.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let c = Self::from_bytes(&std::fs::read(path)?)?;
        let found = vocab.hash();
        if c.vocab_hash != found {
            return Err(Error::VocabularyMismatch {
                expected: c.vocab_hash,
                found,
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn vocab() -> Vocabulary {
        Vocabulary::from_retained(["alpha", "beta", "gamma"].map(String::from))
    }

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = ModelConfig {
            d_model: 4,
            heads: 2,
            ff_width: 6,
            max_len: 8,
            ..ModelConfig::default()
        };
        let mut params = ModelParams::new(&cfg, 7, 2, &mut seed::stream(1, "ck")).unwrap();
        params
            .install_softtriple(
                &[
                    vec![vec![1.0, 0.0, 0.0, 0.0]],
                    vec![vec![0.0, 1.0, 0.0, 0.0]; 2],
                ],
                20.0,
            )
            .unwrap();
        let ck = Checkpoint {
            stage: Stage::Stage3Ufit,
            mode: Mode::Ufit,
            epoch: 3,
            validation_metric: 0.875,
            vocab_hash: vocab().hash(),
            params,
            keywords: Some(KeywordTable {
                proxies: vec![],
                class_keywords: vec![vec!["alpha".into()], vec![]],
            }),
            proxies: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path, &vocab()).unwrap(), ck);
        let other = Vocabulary::from_retained(["delta"].map(String::from));
        assert!(matches!(
            Checkpoint::load(&path, &other),
            Err(Error::VocabularyMismatch { .. })
        ));
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
    }
}
