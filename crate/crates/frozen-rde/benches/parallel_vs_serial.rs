//! Parallel vs serial timings for the data-parallel kernels: the ĉ sweep,
//! the limit profile, and Monte Carlo sample batches. With the default
//! `parallel` feature both variants are benched side by side; built with
//! `--no-default-features` the parallel entry points degrade to serial and
//! the two groups coincide.

use criterion::{criterion_group, criterion_main, Criterion};
use frozen_rde::critical::{linear_grid, profile_f_infinity, profile_f_infinity_seq, sweep_c_hat, sweep_c_hat_seq};
use frozen_rde::rtp::{run_bivariate, run_bivariate_seq, SampleConfig};
use std::hint::black_box;

fn bench_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("sweep_c_hat");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| black_box(sweep_c_hat(0.66, 0.72, 0.005, 1e-7)))
    });
    g.bench_function("serial", |b| {
        b.iter(|| black_box(sweep_c_hat_seq(0.66, 0.72, 0.005, 1e-7)))
    });
    g.finish();
}

fn bench_profile(c: &mut Criterion) {
    let grid = linear_grid(frozen_rde::critical::coupling_upper_bound(0.85), 48);
    let mut g = c.benchmark_group("profile_f_infinity");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| black_box(profile_f_infinity(0.85, &grid).unwrap()))
    });
    g.bench_function("serial", |b| {
        b.iter(|| black_box(profile_f_infinity_seq(0.85, &grid).unwrap()))
    });
    g.finish();
}

fn bench_sampling(c: &mut Criterion) {
    let cfg = SampleConfig { theta: 0.7, depth: 12, n_samples: 4000, seed: 11 };
    let mut g = c.benchmark_group("mc_bivariate");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(run_bivariate(&cfg).unwrap())));
    g.bench_function("serial", |b| b.iter(|| black_box(run_bivariate_seq(&cfg).unwrap())));
    g.finish();
}

criterion_group!(benches, bench_sweep, bench_profile, bench_sampling);
criterion_main!(benches);
