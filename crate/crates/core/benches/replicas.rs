use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use freekummer::matrix_rand::{sample_kummer_eigs, sample_wishart, MatrixKummerParams, WishartParams};
use freekummer::par::{map_replicas, map_replicas_seq, replica_rng};

const REPS: usize = 8;

fn wishart(c: &mut Criterion) {
    let mut group = c.benchmark_group("wishart_replicas");
    group.sample_size(10);
    for n in [50usize, 150] {
        let p = WishartParams::new(2.5 * n as f64, n as f64, n).unwrap();
        let one = |i: usize| sample_wishart(&p, &mut replica_rng(1, i as u64)).unwrap();
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| b.iter(|| map_replicas_seq(REPS, one)));
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| b.iter(|| map_replicas(REPS, one)));
    }
    group.finish();
}

fn kummer(c: &mut Criterion) {
    let mut group = c.benchmark_group("kummer_replicas");
    group.sample_size(10);
    let n = 60usize;
    let nf = n as f64;
    let p = MatrixKummerParams::new(2.0 * nf, nf / 2.0, nf, n).unwrap();
    let one = |i: usize| sample_kummer_eigs(&p, 1_000, 10, &mut replica_rng(2, i as u64)).unwrap();
    group.bench_function("sequential", |b| b.iter(|| map_replicas_seq(REPS, one)));
    group.bench_function("parallel", |b| b.iter(|| map_replicas(REPS, one)));
    group.finish();
}

criterion_group!(benches, wishart, kummer);
criterion_main!(benches);
