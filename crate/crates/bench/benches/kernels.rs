use bundlenet::datasets::{self, SyntheticSpec};
use bundlenet::metrics::{knn_kl, mmd, wasserstein_entropic, wasserstein_exact, Bandwidth};
use bundlenet::model::{build_model, pad_input, ModelConfig};
use bundlenet::train::{train, TrainConfig};
use bundlenet_bench::uniform_cloud;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn metrics(c: &mut Criterion) {
    let a = uniform_cloud(200, 3, 1);
    let b = uniform_cloud(200, 3, 2);
    c.bench_function("w1_exact_200", |bench| {
        bench.iter(|| wasserstein_exact(black_box(&a), black_box(&b), 1).unwrap())
    });
    c.bench_function("knn_kl_200", |bench| {
        bench.iter(|| knn_kl(black_box(&a), black_box(&b), 5).unwrap())
    });
    c.bench_function("mmd_median_200", |bench| {
        bench.iter(|| mmd(black_box(&a), black_box(&b), Bandwidth::Median).unwrap())
    });
    let a = uniform_cloud(1000, 3, 3);
    let b = uniform_cloud(1000, 3, 4);
    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("w1_entropic_1000", |bench| {
        bench.iter(|| wasserstein_entropic(black_box(&a), black_box(&b), 1, 0.05).unwrap())
    });
    group.finish();
}

fn model(c: &mut Criterion) {
    let config = ModelConfig::default();
    let net = build_model(&config).unwrap();
    let x = pad_input(
        &uniform_cloud(1000, 3, 5),
        &config,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let r = [4.5, 0.0];
    c.bench_function("forward_1000", |bench| {
        bench.iter(|| net.forward(black_box(&x), &r).unwrap())
    });
    let (y, z) = net.forward_split(&x, &r).unwrap();
    c.bench_function("inverse_1000", |bench| {
        bench.iter(|| net.inverse(black_box(&y), black_box(&z), &r).unwrap())
    });

    let ds = datasets::generate(&SyntheticSpec::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("train_epoch_torus", |bench| {
        bench.iter(|| train(black_box(&ds), &config, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, metrics, model);
criterion_main!(benches);
