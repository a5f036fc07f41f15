use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kcov::descriptor::{classical_covariance, describe, kernelized_covariance};
use kcov::{DescriptorConfig, KernelSpec};

fn kernelized(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernelized_covariance");
    let k = KernelSpec::exp_dot(1.0).unwrap();
    for (m, t) in [(20, 100), (40, 200), (60, 400)] {
        let x = kcov_bench::trial(m, t, 1);
        g.bench_with_input(BenchmarkId::new("expdot", format!("{m}x{t}")), &x, |b, x| {
            b.iter(|| kernelized_covariance(&k, black_box(x), m).unwrap())
        });
    }
    let x = kcov_bench::trial(60, 100, 2);
    g.bench_function("classical/60x100", |b| b.iter(|| classical_covariance(black_box(&x)).unwrap()));
    g.finish();
}

fn with_log(c: &mut Criterion) {
    // 20 joints × (pos, vel, acc) = 180 rows, a typical full feature matrix.
    let x = kcov_bench::trial(180, 60, 3);
    let cfg = DescriptorConfig::default();
    c.bench_function("describe/180x60", |b| b.iter(|| describe(black_box(&x), &cfg).unwrap()));
}

criterion_group!(benches, kernelized, with_log);
criterion_main!(benches);
