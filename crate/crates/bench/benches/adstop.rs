use std::hint::black_box;

use adstop::spsa::estimate_reward;
use adstop::stopping::{solve, SolverConfig};
use adstop::CompletionRule;
use adstop_bench::{problem, threshold_policy, uniform};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn belief_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("belief_update");
    for name in ["synthetic", "youtube"] {
        let model = problem(name).model().clone();
        let pi = uniform(model.states());
        let y = model.emission().poisson_means().map_or(1, |g| g[1].round() as u32);
        group.bench_with_input(BenchmarkId::from_parameter(name), &y, |b, &y| {
            b.iter(|| model.belief_update(black_box(&pi), black_box(y)).unwrap())
        });
    }
    group.finish();
}

fn value_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("value_iteration");
    group.sample_size(10);
    let syn = problem("synthetic");
    for m in [20, 50] {
        group.bench_with_input(BenchmarkId::new("synthetic", m), &m, |b, &m| {
            b.iter(|| solve(&syn, Some(m), &SolverConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn reward_estimate(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_reward");
    group.sample_size(10);
    let yt = problem("youtube");
    let policy = threshold_policy(yt.states(), yt.stops());
    for batch in [100, 1000] {
        group.bench_with_input(BenchmarkId::new("youtube", batch), &batch, |b, &batch| {
            b.iter(|| estimate_reward(&yt, &policy, 200, batch, 7, CompletionRule::Truncate).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, belief_update, value_iteration, reward_estimate);
criterion_main!(benches);
