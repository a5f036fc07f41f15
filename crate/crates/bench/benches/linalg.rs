use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kcov::linalg::{eig_sym, logm_spd};

fn eig(c: &mut Criterion) {
    let mut g = c.benchmark_group("eig_sym");
    for d in [10, 60, 180] {
        let a = kcov_bench::spd(d, d as u64);
        g.bench_with_input(BenchmarkId::from_parameter(d), &a, |b, a| b.iter(|| eig_sym(black_box(a)).unwrap()));
    }
    g.finish();
}

fn logm(c: &mut Criterion) {
    let a = kcov_bench::spd(60, 7);
    c.bench_function("logm_spd/60", |b| b.iter(|| logm_spd(black_box(&a), 0.0).unwrap()));
}

criterion_group!(benches, eig, logm);
criterion_main!(benches);
