use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use irdqn_bench::Fixture;
use irdqn_core::dqn::{sync_target, train_step, QNetwork};
use irdqn_core::{ActionId, FeatureConfig, NegativeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn retrieval(c: &mut Criterion) {
    let f = Fixture::new();
    let state = f.start(0);
    let r = f.env.retriever();
    c.bench_function("score_all_500_docs", |b| {
        b.iter(|| r.score_all(black_box(&state.query), &NegativeModel::default()).unwrap())
    });
    c.bench_function("rank_500_docs", |b| {
        b.iter(|| r.rank(black_box(&state.query), &state.neg).unwrap())
    });
    let feedback: Vec<_> = state.ranked.top(5).iter().map(|&(d, _)| &r.corpus().docs[d]).collect();
    c.bench_function("expand_top5", |b| b.iter(|| r.expand(black_box(&state.query), &feedback).unwrap()));
}

fn features(c: &mut Criterion) {
    let f = Fixture::new();
    let state = f.start(1);
    let full = FeatureConfig::default();
    let raw = FeatureConfig {
        handcrafted: false,
        ..full
    };
    c.bench_function("features_full", |b| b.iter(|| f.env.features(black_box(&state), &full).unwrap()));
    c.bench_function("features_raw", |b| b.iter(|| f.env.features(black_box(&state), &raw).unwrap()));
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dim = 108;
    let net = QNetwork::new(dim, &[64, 64], &mut rng).unwrap();
    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("forward_108_64_64", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));

    let rows: Vec<Vec<f64>> = (0..64).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let target = sync_target(&net);
    c.bench_function("train_step_batch32", |b| {
        b.iter_batched(
            || net.clone(),
            |mut n| {
                let batch: Vec<(&[f64], ActionId, f64, &[f64], bool)> = (0..32)
                    .map(|i| (rows[i].as_slice(), ActionId::ALL[i % 5], -10.0, rows[i + 32].as_slice(), i % 4 == 0))
                    .collect();
                train_step(&mut n, &target, &batch, 0.9, 1e-3, 1).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, retrieval, features, network);
criterion_main!(benches);
