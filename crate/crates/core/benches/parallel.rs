//! Sequential vs data-parallel execution of the batch-shaped workloads.
//! Without the `parallel` feature both variants run sequentially.

use amodal_ls::dataset::{generate_many, SceneConfig};
use amodal_ls::nn::train::{sample_gradients, TrainConfig};
use amodal_ls::pipeline::Method;
use amodal_ls::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn generation(c: &mut Criterion) {
    let cfg = SceneConfig::default();
    let mut group = c.benchmark_group("generate_64x64_x32");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_many(0, 32, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn batch_gradients(c: &mut Criterion) {
    let samples = generate_many(
        0,
        8,
        &SceneConfig::default().with_size(32, 32),
        Exec::Sequential,
    )
    .unwrap();
    let cfg = TrainConfig::default();
    let (init, vel) = cfg.init_models();
    let mut group = c.benchmark_group("gradients_32x32_batch8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.try_map(&samples, |s| sample_gradients(&init, &vel, s, &cfg))
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let samples = generate_many(
        0,
        32,
        &SceneConfig::default().with_size(32, 32),
        Exec::Sequential,
    )
    .unwrap();
    let cfg = TrainConfig::default();
    let (initializer, velocity) = cfg.init_models();
    let pipeline = amodal_ls::pipeline::Pipeline {
        initializer,
        velocity,
        init: cfg.init,
        evolution: cfg.evolution,
    };
    let mut group = c.benchmark_group("evaluate_32x32_x32");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pipeline
                    .evaluate("bench", &samples, Method::Learned, None, exec)
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, generation, batch_gradients, evaluation);
criterion_main!(benches);
