use std::hint::black_box;

use cfnerf::config::TrainConfig;
use cfnerf::field::{Architecture, FieldModel, SylvesterParams};
use cfnerf::metrics::sparsification;
use cfnerf::objective::kde_loglik;
use cfnerf::render::composite;
use cfnerf::rng;
use cfnerf::scenes::{generate_dataset, two_sphere, CameraRig};
use cfnerf::train::{Trainer, TrainingRays};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

fn bench_composite(c: &mut Criterion) {
    let mut r = rng::from_seed(0);
    let n = 128;
    let alpha: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 2.0).collect();
    let rgb: Vec<[f64; 3]> = (0..n)
        .map(|_| [r.random(), r.random(), r.random()])
        .collect();
    let delta = vec![4.0 / n as f64; n];
    c.bench_function("composite_128", |b| {
        b.iter(|| composite(black_box(&alpha), black_box(&rgb), black_box(&delta)).unwrap())
    });
}

fn bench_kde(c: &mut Criterion) {
    let mut r = rng::from_seed(1);
    let samples: Vec<[f64; 3]> = (0..32)
        .map(|_| [r.random(), r.random(), r.random()])
        .collect();
    c.bench_function("kde_loglik_k32", |b| {
        b.iter(|| kde_loglik(black_box([0.4, 0.5, 0.6]), black_box(&samples), 0.05).unwrap())
    });
}

fn bench_sylvester(c: &mut Criterion) {
    let mut r = rng::from_seed(2);
    let p = SylvesterParams {
        dim: 3,
        bottleneck: 3,
        a: (0..9).map(|_| 0.1 * r.random::<f64>()).collect(),
        b: (0..9).map(|_| 0.1 * r.random::<f64>()).collect(),
        bias: vec![0.1, -0.2, 0.3],
    };
    c.bench_function("sylvester_step_d3", |b| {
        b.iter(|| cfnerf::field::sylvester_step(black_box(&[0.3, -0.1, 0.7]), &p).unwrap())
    });
}

fn bench_sparsification(c: &mut Criterion) {
    let mut r = rng::from_seed(3);
    let err: Vec<f64> = (0..4096).map(|_| r.random()).collect();
    let unc: Vec<f64> = (0..4096).map(|_| r.random()).collect();
    c.bench_function("sparsification_4096", |b| {
        b.iter(|| sparsification(black_box(&err), black_box(&unc)).unwrap())
    });
}

fn bench_train_step(c: &mut Criterion) {
    let scene = two_sphere();
    let ds = generate_dataset(
        &scene,
        &CameraRig::default(),
        2,
        1,
        (16, 16),
        1024,
        &mut rng::from_seed(0),
    )
    .unwrap();
    let data = TrainingRays::from_dataset(&ds).unwrap();
    let model = FieldModel::new(Architecture::compact(), &mut rng::from_seed(4)).unwrap();
    let cfg = TrainConfig {
        batch_rays: 16,
        nodes: 32,
        samples: 4,
        entropy_samples: 32,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg, 1_000_000, data, scene.bounds, 0).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_b16_n32_k4", |b| b.iter(|| trainer.step().unwrap()));
    group.finish();
}

criterion_group!(
    benches,
    bench_composite,
    bench_kde,
    bench_sylvester,
    bench_sparsification,
    bench_train_step
);
criterion_main!(benches);
