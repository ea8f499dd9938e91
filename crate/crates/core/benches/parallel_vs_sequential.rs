//! Tracing + feature extraction and per-sample gradients on one worker versus
//! the full pool. Build with `--no-default-features` to time the sequential
//! fallback itself (both groups then run the same code).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfsplat::config::RunConfig;
use rfsplat::features::Standardizer;
use rfsplat::matching::TruthSet;
use rfsplat::model::tape::Mat;
use rfsplat::model::{sample_loss_grad, Model, TrainSample};
use rfsplat::par;
use rfsplat::pipeline::Pipeline;

fn pipeline() -> Pipeline {
    let cfg = RunConfig::default()
        .with_overrides(&[
            "scene.spheres_per_scene=3".into(),
            "scene.materials=[\"metal\",\"glass\",\"wood\"]".into(),
            "simulation.rx_grid=[4,4]".into(),
        ])
        .unwrap();
    Pipeline::new(cfg).unwrap()
}

fn bench_records(c: &mut Criterion) {
    let p = pipeline();
    let mut g = c.benchmark_group("records");
    g.sample_size(10);
    for workers in [1, par::worker_count().max(2)] {
        g.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || p.records(0..8).unwrap()))
        });
    }
    g.finish();
}

fn bench_gradients(c: &mut Criterion) {
    let cfg = RunConfig::default();
    let model = Model::init(cfg.model.clone(), Standardizer::identity(20), cfg.scene.geometry_norm()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<TrainSample> = (0..16)
        .map(|_| TrainSample {
            input: Mat::from_vec(64, 20, (0..64 * 20).map(|_| rng.random_range(-1.0..1.0)).collect()),
            truth: TruthSet {
                geometry: (0..3).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect(),
                labels: vec![1, 2, 3],
            },
        })
        .collect();
    let w = model.config.loss_weights;
    let mut g = c.benchmark_group("batch_gradients");
    g.sample_size(10);
    for workers in [1, par::worker_count().max(2)] {
        g.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &n| {
            b.iter(|| par::with_workers(n, || par::map_slice(&samples, |s| sample_loss_grad(&model, s, &w).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_records, bench_gradients);
criterion_main!(benches);
