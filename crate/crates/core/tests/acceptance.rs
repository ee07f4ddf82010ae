//! Acceptance criteria 1-9. Each test prints one `criterion N: PASS|FAIL`
//! line with its measurements before asserting.
//!
//! Criteria 5-8 share one five-seed incremental grid over all four modes,
//! computed once per test binary. The expensive criteria hold `HEAVY` so
//! their timings are not inflated by each other.

use std::collections::{HashMap, HashSet};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use underfit_core::corpus::{generate_synthetic_campaigns, Sample, TokenSeq, Vocabulary};
use underfit_core::encoder::{embed, gradient_check, random_case, GradCase, ModelParams};
use underfit_core::eval::*;
use underfit_core::linalg::{softmax, squared_distance};
use underfit_core::losses::*;
use underfit_core::masking::{extract_keywords, word_attention_scores, ScoredSample, WordFilter};
use underfit_core::proxies::{alpha_density_filter, discover_proxies, kmeans, select_k, Selection};
use underfit_core::seed;
use underfit_core::trainer::*;
use underfit_core::{Dataset, SynthConfig};

const FIXTURE_SYNTH: &str = include_str!("../../../configs/fixture_synth.toml");
const FIXTURE_TRAIN: &str = include_str!("../../../configs/fixture_train.toml");

const SEEDS: usize = 5;
const MODES: [Mode; 4] = [Mode::PlainFt, Mode::MaskOnly, Mode::SmoothOnly, Mode::Ufit];
/// Finite differences on every second coordinate, so every tensor of every
/// instance is still sampled.
const GRAD_STRIDE: usize = 2;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn fixture() -> Dataset {
    generate_synthetic_campaigns(&SynthConfig::from_toml(FIXTURE_SYNTH).unwrap()).unwrap()
}

fn fixture_config() -> TrainConfig {
    TrainConfig::from_toml(FIXTURE_TRAIN).unwrap()
}

fn verdict(n: &str, pass: bool, detail: impl AsRef<str>) -> bool {
    println!(
        "criterion {n}: {} ({})",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    pass
}

fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    softmax(&logits)
}

#[test]
fn criterion_1_gradient_suite() {
    let _guard = heavy();
    let start = Instant::now();
    let mut worst: HashMap<String, f64> = HashMap::new();
    for case in GradCase::ALL {
        for s in 0..20 {
            let inst = random_case(case, 1000 + s).unwrap();
            let r = gradient_check(
                &inst.params,
                &inst.examples,
                &inst.spec(),
                1e-5,
                GRAD_STRIDE,
            )
            .unwrap();
            let w = worst.entry(format!("{case:?}")).or_insert(0.0);
            *w = w.max(r.max_relative_error);
        }
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    let pass = max < 1e-4 && elapsed < Duration::from_secs(60);
    let mut cases: Vec<_> = worst.into_iter().collect();
    cases.sort_by(|a, b| a.0.cmp(&b.0));
    let detail = cases
        .iter()
        .map(|(c, e)| format!("{c} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    assert!(verdict(
        "1",
        pass,
        format!("max rel err {max:.2e}; {detail}; {elapsed:.1?}")
    ));
}

#[test]
fn criterion_2_loss_oracles() {
    let mut rng = seed::stream(2, "loss-oracles");
    // one center per class, no margin: plain cross-entropy on scaled similarities
    let mut st_err = 0.0f64;
    for _ in 0..200 {
        let classes = rng.random_range(2..6);
        let d = rng.random_range(2..9);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let lambda = rng.random_range(1.0..30.0);
        let label = rng.random_range(0..classes);
        let sims: Vec<f64> = centers
            .iter()
            .map(|c| softtriple_similarity(&x, &[c]))
            .collect();
        let params = SoftTripleParams {
            lambda_scale: lambda,
            delta: 0.0,
        };
        let logits: Vec<f64> = centers
            .iter()
            .map(|c| lambda * underfit_core::linalg::dot(&x, c))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        st_err = st_err.max((softtriple_loss(&sims, label, &params) - (lse - logits[label])).abs());
    }
    let kl_uniform = (2..12)
        .map(|n| kl_uniform_loss(&vec![1.0 / n as f64; n]).abs())
        .fold(0.0, f64::max);
    let mut asym = 0.0f64;
    let mut min_skl = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(2..8);
        let p = random_simplex(&mut rng, n);
        let q = random_simplex(&mut rng, n);
        let (a, b) = (symmetric_kl(&p, &q), symmetric_kl(&q, &p));
        asym = asym.max((a - b).abs());
        min_skl = min_skl.min(a);
    }
    let pass = st_err < 1e-10 && kl_uniform == 0.0 && asym == 0.0 && min_skl >= 0.0;
    assert!(verdict(
        "2",
        pass,
        format!(
            "softtriple vs CE {st_err:.1e}; KL(uniform) {kl_uniform:e}; SKL asymmetry {asym:e}, min {min_skl:.2e} over 1000 pairs"
        )
    ));
}

#[test]
fn criterion_3_clustering_oracles() {
    let mut rng = seed::stream(3, "clustering-oracles");
    let mut filter_ok = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let d = rng.random_range(1..5);
        let emb: Vec<Vec<f64>> = (0..n + 10)
            .map(|_| {
                (0..d)
                    .map(|_| (rng.random_range(-5..5) as f64) * 0.5)
                    .collect()
            })
            .collect();
        let mut members: Vec<usize> = (0..n + 10).collect();
        members.retain(|_| rng.random_bool(0.8));
        if members.is_empty() {
            members.push(0);
        }
        let centroid: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let alpha = rng.random_range(0.0..0.9);
        // brute force: sort by (distance, index), keep the leading share
        let mut ranked = members.clone();
        ranked.sort_by(|&a, &b| {
            squared_distance(&emb[a], &centroid)
                .partial_cmp(&squared_distance(&emb[b], &centroid))
                .unwrap()
                .then(a.cmp(&b))
        });
        let keep =
            (((1.0 - alpha) * members.len() as f64 + 0.5).floor() as usize).clamp(1, members.len());
        let mut expect = ranked[..keep].to_vec();
        expect.sort_unstable();
        if alpha_density_filter(&emb, &members, &centroid, alpha) == expect {
            filter_ok += 1;
        }
    }

    let mut monotone = true;
    for s in 0..20 {
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let r = kmeans(&pts, 4, s, 100).unwrap();
        monotone &= r.history.windows(2).all(|w| w[1] <= w[0]);
    }

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut two = 0;
    for s in 0..10 {
        let mut blob_rng = seed::stream(s, "two-blobs");
        let mut pts = Vec::new();
        for c in [0.0, 10.0] {
            for _ in 0..50 {
                pts.push(vec![
                    c + normal.sample(&mut blob_rng),
                    c + normal.sample(&mut blob_rng),
                ]);
            }
        }
        if select_k(&pts, 5, Selection::Gap, s, 100, 3).unwrap() == 2 {
            two += 1;
        }
    }
    let pass = filter_ok == 100 && monotone && two == 10;
    assert!(verdict(
        "3",
        pass,
        format!(
            "density filter {filter_ok}/100; k-means inertia monotone {monotone}; gap K=2 {two}/10"
        )
    ));
}

#[test]
fn criterion_4_keyword_extraction() {
    // hand example: uniform attention over CLS + 4 words, tau = 0.5
    let vocab = Vocabulary::from_retained(["covid", "vaccine", "hoax"].map(String::from));
    let seq = TokenSeq {
        ids: vec![
            Vocabulary::CLS,
            vocab.id("covid"),
            vocab.id("hoax"),
            vocab.id("covid"),
            vocab.id("vaccine"),
        ],
    };
    let attention = [0.2; 5];
    let scores = word_attention_scores(
        &[ScoredSample {
            tokens: &seq,
            attention: &attention,
            tau: 0.5,
        }],
        &vocab,
        WordFilter::NONE,
    );
    let expect = [("covid", 0.2), ("hoax", 0.1), ("vaccine", 0.1)];
    let hand_err = scores
        .iter()
        .zip(expect)
        .map(|((w, s), (ew, es))| {
            if w == ew {
                (s - es).abs()
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let hand_ok = scores.len() == 3 && hand_err <= 1e-12;

    let _guard = heavy();
    let synth = SynthConfig::from_toml(FIXTURE_SYNTH).unwrap();
    let words = synth.words();
    let data = generate_synthetic_campaigns(&synth).unwrap();
    let config = fixture_config();
    let prepared = prepare(&data, &config).unwrap();
    let mut rng = seed::stream(config.seed, "init");
    let init = ModelParams::new(&config.model, prepared.vocab.len(), 2, &mut rng).unwrap();
    let s1 = stage1_finetune(
        init,
        &prepared.train,
        &prepared.val,
        &config,
        Mode::Ufit,
        &mut Vec::new(),
        &NoObserver,
    )
    .unwrap();
    let emb: Vec<Vec<f64>> = prepared
        .train
        .tokens
        .iter()
        .map(|t| embed(&s1.params, t).unwrap())
        .collect();
    let proxies = discover_proxies(
        &emb,
        &prepared.train.labels,
        2,
        &config.proxies,
        config.seed,
    )
    .unwrap();
    let table = extract_keywords(
        &s1.params,
        &proxies,
        &prepared.train.tokens,
        &prepared.vocab,
        10,
    )
    .unwrap();
    let mut found = 0;
    let mut total = 0;
    let mut missing = Vec::new();
    for campaign in &words.strong {
        for (class, planted) in campaign.iter().enumerate() {
            for w in planted {
                total += 1;
                if table
                    .proxies
                    .iter()
                    .any(|p| p.class == class && p.top1() == Some(w.as_str()))
                {
                    found += 1;
                } else {
                    missing.push(w.clone());
                }
            }
        }
    }
    let pass = hand_ok && found == total;
    assert!(verdict(
        "4",
        pass,
        format!(
            "hand example err {hand_err:.1e}; planted keywords top-1 {found}/{total} {missing:?}"
        )
    ));
}

struct Grid {
    report: EvalReport,
    elapsed: Duration,
}

fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let _guard = heavy();
        let data = fixture();
        let config = EvalConfig::new(fixture_config(), Protocol::Incremental, SEEDS);
        let start = Instant::now();
        let report = incremental_eval(&data, &config, &MODES).unwrap();
        Grid {
            report,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_5_directional_benchmark() {
    let g = grid();
    let m = |mode| g.report.mode(mode).unwrap();
    let (plain, ufit) = (m(Mode::PlainFt), m(Mode::Ufit));
    let (mask, smooth) = (m(Mode::MaskOnly), m(Mode::SmoothOnly));
    let a = 100.0 * (plain.id_accuracy.mean - plain.test_accuracy.mean);
    let b = 100.0 * (ufit.test_accuracy.mean - plain.test_accuracy.mean);
    let c = 100.0 * (plain.id_accuracy.mean - ufit.id_accuracy.mean).abs();
    let d_mask = 100.0 * (ufit.test_accuracy.mean - mask.test_accuracy.mean);
    let d_smooth = 100.0 * (ufit.test_accuracy.mean - smooth.test_accuracy.mean);
    let fast = g.elapsed < Duration::from_secs(600);
    let checks = [
        ("a", a >= 15.0),
        ("b", b >= 10.0),
        ("c", c <= 5.0),
        ("d", d_mask >= 0.0 && d_smooth >= 0.0),
        ("time", fast),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty();
    assert!(verdict(
        "5",
        pass,
        format!(
            "(a) plain ID-NNAD {a:.1} pts; (b) ufit-plain NNAD {b:.1} pts; (c) |ID gap| {c:.1} pts; \
             (d) ufit-mask_only {d_mask:.1}, ufit-smooth_only {d_smooth:.1} pts; {:.0?} over {SEEDS} seeds; failed {failed:?}",
            g.elapsed
        )
    ));
}

#[test]
fn criterion_6_overfitting_probe() {
    let g = grid();
    let drops = |mode| -> Vec<f64> {
        let id = g.report.per_run(mode, |c| Some(c.id_accuracy)).unwrap();
        let masked = g.report.per_run(mode, |c| c.id_masked_accuracy).unwrap();
        id.iter()
            .zip(&masked)
            .map(|(a, b)| 100.0 * (a - b))
            .collect()
    };
    let plain = drops(Mode::PlainFt);
    let ufit = drops(Mode::Ufit);
    let ok = plain
        .iter()
        .zip(&ufit)
        .filter(|(p, u)| **p >= 20.0 && **u <= 5.0)
        .count();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.1}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    assert!(verdict(
        "6",
        ok == SEEDS,
        format!(
            "{ok}/{SEEDS} seeds; plain drops [{}] (>=20), ufit drops [{}] (<=5)",
            fmt(&plain),
            fmt(&ufit)
        )
    ));
}

/// Direction of the keyword-masked probe, averaged over seeds.
#[test]
fn masked_accuracy_favors_ufit_over_plain() {
    let g = grid();
    let masked = |mode| {
        g.report
            .mode(mode)
            .unwrap()
            .id_masked_accuracy
            .unwrap()
            .mean
    };
    assert!(masked(Mode::PlainFt) < masked(Mode::Ufit));
}

#[test]
fn criterion_7_smoothness_ordering() {
    // brute-force oracle: every ordered pair inside each proxy
    let mut rng = seed::stream(7, "lipschitz-oracle");
    let mut oracle_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=50);
        let probs: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(&mut rng, 3)).collect();
        let emb: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut brute = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let de = squared_distance(&emb[i], &emb[j]).sqrt();
                if i == j || de < MIN_EMBEDDING_DISTANCE {
                    continue;
                }
                let dp: f64 = probs[i]
                    .iter()
                    .zip(&probs[j])
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                brute = brute.max(dp / de);
            }
        }
        let p: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
        let e: Vec<&[f64]> = emb.iter().map(Vec::as_slice).collect();
        oracle_ok &= pairwise_lipschitz(&p, &e) == brute;
    }

    let g = grid();
    let plain = g.report.per_run(Mode::PlainFt, |c| c.l_score).unwrap();
    let ufit = g.report.per_run(Mode::Ufit, |c| c.l_score).unwrap();
    let wins = ufit.iter().zip(&plain).filter(|(u, p)| u < p).count();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    assert!(verdict(
        "7",
        oracle_ok && wins >= 4,
        format!(
            "oracle exact {oracle_ok}; ufit < plain in {wins}/{SEEDS} seeds; ufit [{}] plain [{}]",
            fmt(&ufit),
            fmt(&plain)
        )
    ));
}

#[test]
fn criterion_8_protocol_audit() {
    // the audit must be able to see a leak at all
    let audit = CampaignAudit::new(HashSet::from(["c2".to_string()]), HashSet::new());
    let leak = Sample {
        text: "x".into(),
        label: 0,
        campaign: "c2".into(),
        position: 0,
    };
    audit.observe(Stage::Stage1Ft, &[&leak]);
    let detects = audit.summary().violations == 1;

    let a = &grid().report.audit;
    let pass = detects && a.violations == 0 && a.batches > 0;
    assert!(verdict(
        "8",
        pass,
        format!(
            "control leak detected {detects}; {} batches, {} samples, {} violations",
            a.batches, a.samples, a.violations
        )
    ));
}

#[test]
fn criterion_9_determinism() {
    let _guard = heavy();
    let mut synth = SynthConfig::from_toml(FIXTURE_SYNTH).unwrap();
    synth.samples_per_campaign = 150;
    let data = generate_synthetic_campaigns(&synth).unwrap();
    let mut config = fixture_config();
    config.mode = Mode::Ufit;

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train_pipeline(&data, &config, Some(d.path())).unwrap();
    }
    let mut differing = Vec::new();
    let mut compared = 0;
    for name in [
        "stage1.ckpt",
        "stage2.ckpt",
        "stage3.ckpt",
        "keywords.tsv",
        "keyword_masks.json",
        "proxies.json",
    ] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        compared += 1;
        if a != b {
            differing.push(name.to_string());
        }
    }

    let eval = EvalConfig::new(config.clone(), Protocol::Incremental, 2);
    let reports: Vec<(String, String)> = (0..2)
        .map(|_| {
            let r = incremental_eval(&data, &eval, &[Mode::PlainFt, Mode::Ufit]).unwrap();
            (r.to_json().unwrap(), r.to_csv().unwrap())
        })
        .collect();
    compared += 2;
    if reports[0].0 != reports[1].0 {
        differing.push("report json".into());
    }
    if reports[0].1 != reports[1].1 {
        differing.push("report csv".into());
    }
    assert!(verdict(
        "9",
        differing.is_empty(),
        format!(
            "{} of {compared} artifacts byte-identical; differing {differing:?}",
            compared - differing.len()
        )
    ));
}
