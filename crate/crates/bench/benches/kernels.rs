use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dtc_core::assignment::{soft_assign, target_distribution, Prototypes};
use dtc_core::kmeans::{kmeans, DEFAULT_MAX_ITER, DEFAULT_TOL};
use dtc_core::metrics::{clustering_accuracy, silhouette};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn bench_assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("soft_assign");
    for &n in &[1_000usize, 10_000] {
        let z = gaussian(n, 10, 1);
        let protos = Prototypes::new(gaussian(10, 10, 2), 1.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| soft_assign(z.view(), &protos).unwrap())
        });
    }
    group.finish();

    let z = gaussian(10_000, 10, 3);
    let protos = Prototypes::new(gaussian(10, 10, 4), 1.0).unwrap();
    let p = soft_assign(z.view(), &protos).unwrap();
    c.bench_function("target_distribution/10000", |b| b.iter(|| target_distribution(&p).unwrap()));
}

fn bench_kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(20);
    for &k in &[5usize, 20] {
        let x = gaussian(2_000, 16, 5);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| kmeans(x.view(), k, 7, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap())
        });
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("silhouette");
    group.sample_size(20);
    for &n in &[500usize, 2_000] {
        let x = gaussian(n, 16, 6);
        let y = labels(n, 8, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| silhouette(x.view(), &y).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("clustering_accuracy");
    for &k in &[10usize, 100] {
        let truth = labels(20_000, k, 8);
        let predicted = labels(20_000, k, 9);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| clustering_accuracy(&truth, &predicted).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_assignment, bench_kmeans, bench_metrics);
criterion_main!(benches);
