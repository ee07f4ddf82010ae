use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stopwords::is_stopword;
use crate::corpus::{TokenId, TokenSeq, Vocabulary};
use crate::encoder::{forward, ModelParams};
use crate::error::{Error, Result};
use crate::proxies::ProxySet;

/// Length-dependent weight `sigmoid((len − tau_hat) / sqrt(tau_hat))`.
pub fn temperature(length: usize, tau_hat: f64) -> f64 {
    let z = (length as f64 - tau_hat) / tau_hat.sqrt();
    1.0 / (1.0 + (-z).exp())
}

/// Median of the lengths (mean of the two middle values for even counts),
/// floored at 1.
pub fn median_length(lengths: &[usize]) -> f64 {
    if lengths.is_empty() {
        return 1.0;
    }
    let mut v = lengths.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    let med = if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] + v[m]) as f64 / 2.0
    };
    med.max(1.0)
}

/// Which vocabulary words may become keywords.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordFilter {
    pub min_chars: usize,
    pub skip_stopwords: bool,
}

impl WordFilter {
    pub const STANDARD: WordFilter = WordFilter {
        min_chars: 3,
        skip_stopwords: true,
    };
    pub const NONE: WordFilter = WordFilter {
        min_chars: 0,
        skip_stopwords: false,
    };

    pub fn admits(&self, word: &str) -> bool {
        word.chars().count() >= self.min_chars && !(self.skip_stopwords && is_stopword(word))
    }
}

/// One sample's tokens, its per-token attention and its temperature.
#[derive(Clone, Copy, Debug)]
pub struct ScoredSample<'a> {
    pub tokens: &'a TokenSeq,
    pub attention: &'a [f64],
    pub tau: f64,
}

/// `score(w) = Σ_i τ_i Σ_j [t_j = w] a_j`, ranked by score descending then
/// word ascending. Reserved tokens and filtered words are skipped.
pub fn word_attention_scores(
    samples: &[ScoredSample],
    vocab: &Vocabulary,
    filter: WordFilter,
) -> Vec<(String, f64)> {
    let mut by_id: HashMap<TokenId, f64> = HashMap::new();
    for s in samples {
        for (&t, &a) in s.tokens.ids.iter().zip(s.attention) {
            if Vocabulary::is_reserved(t) {
                continue;
            }
            *by_id.entry(t).or_insert(0.0) += s.tau * a;
        }
    }
    let mut ranked: Vec<(String, f64)> = by_id
        .into_iter()
        .map(|(t, v)| (vocab.word(t).to_string(), v))
        .filter(|(w, _)| filter.admits(w))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyKeywords {
    pub proxy_id: usize,
    pub class: usize,
    pub tau_hat: f64,
    /// Top words, best first.
    pub ranked: Vec<(String, f64)>,
}

impl ProxyKeywords {
    pub fn top1(&self) -> Option<&str> {
        self.ranked.first().map(|(w, _)| w.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub proxies: Vec<ProxyKeywords>,
    /// Per class, the sorted union of its proxies' top-1 words.
    pub class_keywords: Vec<Vec<String>>,
}

/// Keeps each proxy's `top_k` list and builds the class sets from top-1
/// words.
pub fn aggregate_keywords(
    per_proxy: Vec<ProxyKeywords>,
    num_classes: usize,
    top_k: usize,
) -> KeywordTable {
    let mut sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); num_classes];
    let proxies: Vec<ProxyKeywords> = per_proxy
        .into_iter()
        .map(|mut p| {
            if let (Some(w), Some(set)) = (p.top1(), sets.get_mut(p.class)) {
                set.insert(w.to_string());
            }
            p.ranked.truncate(top_k);
            p
        })
        .collect();
    KeywordTable {
        proxies,
        class_keywords: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

/// Scores words over each proxy's high-density members using the
/// classifier's final-layer attention. `tokens[i]` must be the sequence of
/// the sample the proxy set indexes as `i`.
pub fn extract_keywords(
    params: &ModelParams,
    proxies: &ProxySet,
    tokens: &[TokenSeq],
    vocab: &Vocabulary,
    top_k: usize,
) -> Result<KeywordTable> {
    let mut per_proxy = Vec::with_capacity(proxies.len());
    for p in &proxies.proxies {
        if let Some(&bad) = p.high_density.iter().find(|&&i| i >= tokens.len()) {
            return Err(Error::DimensionMismatch(format!(
                "proxy {} refers to sample {bad} of {}",
                p.id,
                tokens.len()
            )));
        }
        let seqs: Vec<TokenSeq> = p.high_density.iter().map(|&i| tokens[i].clone()).collect();
        let outputs = forward(params, &seqs, None)?;
        let lengths: Vec<usize> = seqs.iter().map(TokenSeq::len).collect();
        let tau_hat = median_length(&lengths);
        let samples: Vec<ScoredSample> = seqs
            .iter()
            .zip(&outputs)
            .map(|(s, o)| ScoredSample {
                tokens: s,
                attention: &o.attention,
                tau: temperature(s.len(), tau_hat),
            })
            .collect();
        per_proxy.push(ProxyKeywords {
            proxy_id: p.id,
            class: p.class,
            tau_hat,
            ranked: word_attention_scores(&samples, vocab, WordFilter::STANDARD),
        });
    }
    Ok(aggregate_keywords(per_proxy, params.num_classes, top_k))
}

impl KeywordTable {
    pub fn class_set(&self, class: usize) -> &[String] {
        self.class_keywords.get(class).map_or(&[], Vec::as_slice)
    }

    /// Union of every class set, sorted.
    pub fn all_keywords(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.class_keywords.iter().flatten().collect();
        set.into_iter().cloned().collect()
    }

    /// Vocabulary ids of a class set; words missing from the vocabulary are
    /// dropped.
    pub fn class_ids(&self, class: usize, vocab: &Vocabulary) -> Vec<TokenId> {
        ids_of(self.class_set(class), vocab)
    }

    pub fn all_ids(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        ids_of(&self.all_keywords(), vocab)
    }

    pub fn is_empty(&self) -> bool {
        self.class_keywords.iter().all(Vec::is_empty)
    }

    /// `proxy_id, class, rank, word, score` rows with a header line; ranks
    /// start at 1.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("proxy_id\tclass\trank\tword\tscore\n");
        for p in &self.proxies {
            for (r, (w, s)) in p.ranked.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{:.12e}",
                    p.proxy_id,
                    p.class,
                    r + 1,
                    w,
                    s
                );
            }
        }
        out
    }

    /// `{"classes": [[words of class 0], ...]}`
    pub fn mask_sets_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct MaskSets<'a> {
            classes: &'a [Vec<String>],
        }
        Ok(serde_json::to_string_pretty(&MaskSets {
            classes: &self.class_keywords,
        })?)
    }

    pub fn save(&self, tsv: &Path, masks: &Path) -> Result<()> {
        std::fs::write(tsv, self.to_tsv())?;
        std::fs::write(masks, self.mask_sets_json()?)?;
        Ok(())
    }

    /// Reads the class mask sets written by [`KeywordTable::save`]; per-proxy
    /// lists are not restored.
    pub fn load_mask_sets(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct MaskSets {
            classes: Vec<Vec<String>>,
        }
        let m: MaskSets = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(KeywordTable {
            proxies: Vec::new(),
            class_keywords: m.classes,
        })
    }
}

fn ids_of(words: &[String], vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = words.iter().filter_map(|w| vocab.get(w)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}
