use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quadhedge_bench::market;
use quadhedge_core::counterexample::{flvr_demo, opportunity_table};
use quadhedge_core::{
    build_vo_spd, compute_opportunity, hedge_payoff, oracle_mean_value, CounterexampleConfig,
};
use std::hint::black_box;

fn engine(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine");
    for (horizon, dim) in [(3, 1), (5, 2), (6, 3)] {
        let f = market(1, horizon, dim, 5_000);
        let id = format!("T{horizon}_d{dim}_{}nodes", f.tree.len());
        g.bench_with_input(BenchmarkId::new("opportunity", &id), &f, |b, f| {
            b.iter(|| compute_opportunity(black_box(&f.tree), black_box(&f.prices)).unwrap())
        });
        let opp = compute_opportunity(&f.tree, &f.prices).unwrap();
        g.bench_with_input(BenchmarkId::new("hedge", &id), &f, |b, f| {
            b.iter(|| hedge_payoff(&f.tree, &f.prices, black_box(&opp), black_box(&f.claim)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("density", &id), &f, |b, f| {
            b.iter(|| build_vo_spd(&f.tree, &f.prices, black_box(&opp)).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    for (horizon, dim) in [(3, 2), (4, 3)] {
        let f = market(2, horizon, dim, 600);
        let id = format!("T{horizon}_d{dim}_{}nodes", f.tree.len());
        g.bench_with_input(BenchmarkId::new("root_projection", id), &f, |b, f| {
            b.iter(|| oracle_mean_value(&f.tree, &f.prices, &f.claim, f.tree.root()).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("counterexample");
    g.sample_size(10);
    let cfg = CounterexampleConfig::new(0.5, 1e-3, 20_000, 42).unwrap();
    g.bench_function("opportunity_table_20k", |b| {
        b.iter(|| opportunity_table(black_box(&cfg), &[0.0, 0.25, 0.5, 0.75]).unwrap())
    });
    let small = CounterexampleConfig::new(0.5, 1e-2, 2_000, 42).unwrap();
    g.bench_function("flvr_2k_paths", |b| b.iter(|| flvr_demo(black_box(&small), &[5, 20, 100], 2).unwrap()));
    g.finish();
}

criterion_group!(benches, engine, oracle, monte_carlo);
criterion_main!(benches);
