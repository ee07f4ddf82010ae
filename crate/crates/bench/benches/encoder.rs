use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use underfit_core::encoder::{backward, forward, random_case, GradCase, ModelConfig, ModelParams};
use underfit_core::seed;
use underfit_core::{TokenSeq, Vocabulary};

fn batch(n: usize, len: usize, vocab: u32) -> Vec<TokenSeq> {
    (0..n)
        .map(|i| {
            let mut ids = vec![Vocabulary::CLS];
            ids.extend((1..len).map(|j| 4 + ((i * 31 + j * 7) as u32 % (vocab - 4))));
            TokenSeq { ids }
        })
        .collect()
}

fn bench_forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let params = ModelParams::new(&cfg, 300, 2, &mut seed::stream(1, "bench")).unwrap();
    let seqs = batch(64, 16, 300);
    c.bench_function("forward/64x16/d32", |b| {
        b.iter(|| forward(black_box(&params), black_box(&seqs), None).unwrap())
    });
}

fn bench_backward(c: &mut Criterion) {
    for case in [GradCase::FineTune, GradCase::Complete] {
        let inst = random_case(case, 3).expect("gradcheck case");
        c.bench_function(&format!("backward/{case:?}"), |b| {
            b.iter(|| {
                backward(
                    black_box(&inst.params),
                    black_box(&inst.examples),
                    &inst.spec(),
                )
                .unwrap()
            })
        });
    }
}

criterion_group!(benches, bench_forward, bench_backward);
criterion_main!(benches);
