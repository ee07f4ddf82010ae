use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use std::hint::black_box;
use underfit_core::proxies::{discover_proxies, kmeans_best, ProxyConfig};
use underfit_core::seed;

fn blobs(n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = seed::stream(5, "bench-blobs");
    (0..n)
        .map(|i| {
            let center = if i % 2 == 0 { 1.0 } else { -1.0 };
            (0..d)
                .map(|_| center + rng.random_range(-0.5..0.5))
                .collect()
        })
        .collect()
}

fn bench_kmeans(c: &mut Criterion) {
    let pts = blobs(400, 32);
    c.bench_function("kmeans_best/400x32/k4", |b| {
        b.iter(|| kmeans_best(black_box(&pts), 4, 1, 100, 3).unwrap())
    });
}

fn bench_discover(c: &mut Criterion) {
    let pts = blobs(400, 32);
    let labels: Vec<usize> = (0..400).map(|i| (i / 2) % 2).collect();
    let cfg = ProxyConfig::default();
    c.bench_function("discover_proxies/400x32", |b| {
        b.iter(|| discover_proxies(black_box(&pts), &labels, 2, &cfg, 1).unwrap())
    });
}

criterion_group!(benches, bench_kmeans, bench_discover);
criterion_main!(benches);
