use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use defl_bench::candidates;
use defl_core::aggregation::{krum_scores, multi_krum, AggregationParams, AggregationRule};
use defl_core::harness::{base_quadratic, run_seed};
use defl_core::model::{canonical_serialize, digest};

fn bench_krum(c: &mut Criterion) {
    let mut g = c.benchmark_group("multi_krum");
    for n in [4usize, 10, 32] {
        let f = (n - 1) / 3;
        let (vs, owners) = candidates(n, 1000);
        let params = AggregationParams::for_available(n, f, None, None).unwrap();
        g.bench_with_input(BenchmarkId::new("scores", n), &n, |b, _| {
            b.iter(|| krum_scores(black_box(&vs), params.neighborhood).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("aggregate", n), &n, |b, _| {
            b.iter(|| multi_krum(black_box(&vs), &owners, &params).unwrap())
        });
    }
    g.finish();
}

fn bench_digest(c: &mut Criterion) {
    let mut g = c.benchmark_group("model");
    for d in [20usize, 10_000] {
        let (vs, _) = candidates(1, d);
        g.bench_with_input(BenchmarkId::new("serialize", d), &d, |b, _| {
            b.iter(|| canonical_serialize(black_box(&vs[0])).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("digest", d), &d, |b, _| {
            b.iter(|| digest(black_box(&vs[0])).unwrap())
        });
    }
    g.finish();
}

fn bench_simulation(c: &mut Criterion) {
    let mut cfg = base_quadratic(4, AggregationRule::MultiKrum);
    cfg.system.rounds = 10;
    c.bench_function("simulate/quadratic-n4-10-rounds", |b| {
        b.iter(|| run_seed(black_box(&cfg), 0).unwrap())
    });
}

criterion_group!(benches, bench_krum, bench_digest, bench_simulation);
criterion_main!(benches);
