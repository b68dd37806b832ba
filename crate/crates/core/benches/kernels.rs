use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oukl_core::maximal::{tabulate_maximal, ExperimentConfig, LevelSetConfig};
use oukl_core::semigroup::TestFunction;
use oukl_core::Model;
use std::hint::black_box;

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap()
}

fn maximal_field(c: &mut Criterion) {
    let model = Model::preset("nonnormal2d").unwrap();
    let f = TestFunction::Indicator { center: vec![0.5, 0.25], radius: 0.3, weight: 1.0 };
    let config = ExperimentConfig { level: LevelSetConfig { cells: 24, margin: 2.0 }, ..ExperimentConfig::default() };
    let (lo, hi) = (vec![-4.0, -4.0], vec![4.0, 4.0]);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());

    let mut group = c.benchmark_group("tabulate_maximal");
    group.sample_size(10);
    for (label, n) in [("sequential", 1), ("parallel", workers)] {
        let pool = pool(n);
        group.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
            b.iter(|| pool.install(|| tabulate_maximal(&model, &f, black_box(&lo), black_box(&hi), &config).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, maximal_field);
criterion_main!(benches);
