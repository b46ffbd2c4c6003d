use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use osal::sampling::{fit_weibull, select, SamplingParams, Strategy};
use osal::seed;
use osal_bench::fixture;
use rand::Rng;

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("select");
    group.sample_size(10);
    for pool_size in [1_000, 10_000] {
        let fx = fixture(pool_size);
        let params = SamplingParams::default();
        for strategy in Strategy::ALL {
            group.bench_with_input(BenchmarkId::new(strategy.as_str(), pool_size), &pool_size, |b, _| {
                b.iter(|| select(strategy, &fx.model, &fx.unlabeled, &fx.labeled, 100, &params, 7).unwrap())
            });
        }
    }
    group.finish();
}

fn weibull_fit(c: &mut Criterion) {
    let mut rng = seed::stream(1, "bench", 0);
    let distances: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 4.0).collect();
    c.bench_function("fit_weibull/10000", |b| b.iter(|| fit_weibull(black_box(&distances), 0.25).unwrap()));
}

criterion_group!(benches, selection, weibull_fit);
criterion_main!(benches);
