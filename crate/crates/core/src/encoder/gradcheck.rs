//! Central finite-difference verification of [`backward`].

use crate::error::Result;

use super::backward::{backward, evaluate_loss, Example, LossSpec};
use super::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_relative_error: f64,
    /// `(tensor index, element)` of the worst coordinate.
    pub worst: (usize, usize),
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)` between the analytic
/// gradient `a` and the central difference `n` at step `h`, over every
/// coordinate (or every `stride`-th one).
pub fn gradient_check(
    params: &ModelParams,
    examples: &[Example],
    spec: &LossSpec,
    h: f64,
    stride: usize,
) -> Result<GradCheckReport> {
    let (_, analytic) = backward(params, examples, spec)?;
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        coordinates: 0,
        max_relative_error: 0.0,
        worst: (0, 0),
    };
    let stride = stride.max(1);
    let mut counter = 0usize;
    for (ti, grad) in analytic.iter().enumerate() {
        for (ei, &a) in grad.iter().enumerate() {
            counter += 1;
            if !counter.is_multiple_of(stride) {
                continue;
            }
            let original = params.tensors()[ti].1[ei];
            probe.tensors_mut()[ti].1[ei] = original + h;
            let plus = evaluate_loss(&probe, examples, spec)?.total;
            probe.tensors_mut()[ti].1[ei] = original - h;
            let minus = evaluate_loss(&probe, examples, spec)?.total;
            probe.tensors_mut()[ti].1[ei] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.coordinates += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (ti, ei);
            }
        }
    }
    Ok(report)
}

/// The loss compositions exercised by the gradient suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCase {
    /// Cross-entropy task alone.
    CrossEntropy,
    /// Masked-token cross-entropy alone.
    Mlm,
    /// KL to uniform alone.
    KlUniform,
    /// Multi-center task loss alone.
    SoftTriple,
    /// Intra-proxy smoothing alone.
    Smooth,
    /// Cross-entropy task plus weighted masked-token and KL terms.
    FineTune,
    /// Multi-center task plus all weighted terms.
    Complete,
}

impl GradCase {
    pub const ALL: [GradCase; 7] = [
        GradCase::CrossEntropy,
        GradCase::Mlm,
        GradCase::KlUniform,
        GradCase::SoftTriple,
        GradCase::Smooth,
        GradCase::FineTune,
        GradCase::Complete,
    ];
}

pub struct GradInstance {
    pub params: ModelParams,
    pub examples: Vec<Example>,
    pub task: super::TaskLoss,
    pub weights: crate::losses::LossWeights,
}

impl GradInstance {
    pub fn spec(&self) -> LossSpec<'_> {
        LossSpec {
            task: self.task,
            weights: self.weights,
            proxy_centroids: None,
        }
    }
}

/// A small random model (d=8, V=50, 3 classes) and a batch of four
/// examples wired for `case`.
pub fn random_case(case: GradCase, seed_value: u64) -> Result<GradInstance> {
    use rand::Rng;

    use crate::corpus::{TokenSeq, Vocabulary};
    use crate::losses::{LossWeights, SoftTripleParams};

    let mut rng = crate::seed::stream(seed_value, "gradcheck");
    let config = super::ModelConfig {
        d_model: 8,
        heads: 2,
        ff_width: 16,
        blocks: 2,
        max_len: 12,
        init_scale: 0.5,
    };
    let classes = 3;
    let vocab = 50;
    let mut params = ModelParams::new(&config, vocab, classes, &mut rng)?;
    let softtriple = matches!(
        case,
        GradCase::SoftTriple | GradCase::Complete | GradCase::Smooth
    );
    if softtriple {
        let centers: Vec<Vec<Vec<f64>>> = (0..classes)
            .map(|_| {
                (0..2)
                    .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        params.install_softtriple(&centers, 4.0)?;
    }
    let mut examples = Vec::new();
    for i in 0..4 {
        let len = rng.random_range(3..10);
        let mut ids = vec![Vocabulary::CLS];
        ids.extend((0..len).map(|_| rng.random_range(4..vocab as u32)));
        let mut mlm_targets = Vec::new();
        if matches!(
            case,
            GradCase::Mlm | GradCase::FineTune | GradCase::Complete
        ) {
            for _ in 0..rng.random_range(1..3) {
                let pos = rng.random_range(1..ids.len());
                if ids[pos] != Vocabulary::MASK {
                    mlm_targets.push((pos, ids[pos]));
                    ids[pos] = Vocabulary::MASK;
                }
            }
        }
        examples.push(Example {
            tokens: TokenSeq { ids },
            label: rng.random_range(0..classes),
            mlm_targets,
            task: true,
            kl: i % 2 == 1 || case == GradCase::KlUniform,
            smooth: true,
            proxy: Some(i % 2),
        });
    }
    let st = super::TaskLoss::SoftTriple(SoftTripleParams {
        lambda_scale: 4.0,
        delta: 0.1,
    });
    let only = |mlm: f64, kl: f64, smooth: f64| LossWeights {
        lambda_mlm: mlm,
        lambda_kl: kl,
        lambda_smooth: smooth,
    };
    let (task, weights) = match case {
        GradCase::CrossEntropy => (super::TaskLoss::CrossEntropy, only(0.0, 0.0, 0.0)),
        GradCase::Mlm => (super::TaskLoss::None, only(1.0, 0.0, 0.0)),
        GradCase::KlUniform => (super::TaskLoss::None, only(0.0, 1.0, 0.0)),
        GradCase::SoftTriple => (st, only(0.0, 0.0, 0.0)),
        GradCase::Smooth => (super::TaskLoss::None, only(0.0, 0.0, 1.0)),
        GradCase::FineTune => (super::TaskLoss::CrossEntropy, only(0.5, 0.5, 0.0)),
        GradCase::Complete => (st, LossWeights::default()),
    };
    Ok(GradInstance {
        params,
        examples,
        task,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_at_one_seed() {
        for case in GradCase::ALL {
            let inst = random_case(case, 11).unwrap();
            let r = gradient_check(&inst.params, &inst.examples, &inst.spec(), 1e-5, 3).unwrap();
            assert!(r.max_relative_error < 1e-4, "{case:?}: {r:?}");
        }
    }

    #[test]
    fn zero_weight_term_contributes_nothing() {
        let inst = random_case(GradCase::FineTune, 5).unwrap();
        let mut no_kl = inst.weights;
        no_kl.lambda_kl = 0.0;
        let mut spec = inst.spec();
        spec.weights = no_kl;
        let (_, with_zero) = backward(&inst.params, &inst.examples, &spec).unwrap();
        let stripped: Vec<Example> = inst
            .examples
            .iter()
            .map(|e| Example {
                kl: false,
                ..e.clone()
            })
            .collect();
        let (_, without) = backward(&inst.params, &stripped, &spec).unwrap();
        assert_eq!(with_zero, without);
    }

    #[test]
    fn all_zero_weights_match_plain_cross_entropy() {
        let inst = random_case(GradCase::FineTune, 8).unwrap();
        let mut spec = inst.spec();
        spec.weights = crate::losses::LossWeights::ZERO;
        let plain: Vec<Example> = inst
            .examples
            .iter()
            .map(|e| Example::classify(e.tokens.clone(), e.label))
            .collect();
        assert_eq!(
            backward(&inst.params, &inst.examples, &spec).unwrap(),
            backward(&inst.params, &plain, &spec).unwrap()
        );
    }
}
