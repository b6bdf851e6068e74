use std::hint::black_box;

use affine_adam::lemmas::{check_momentum_ratio, check_sum_ratio_log, check_sum_ratio_sqrt};
use affine_adam::{adam_step, run_trajectory, LogLevel, OptimizerState, TrajectoryOptions};
use affine_adam_bench::{adam_config, quartic, sequence_case};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn step(c: &mut Criterion) {
    let config = adam_config();
    let mut group = c.benchmark_group("adam_step");
    for d in [10, 1000] {
        let g: Vec<f64> = (0..d).map(|i| (i as f64).sin()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, &d| {
            let mut state = OptimizerState {
                x: vec![0.5; d],
                m: vec![0.0; d],
                v: vec![1.0; d],
                t: 0,
            };
            b.iter(|| adam_step(&mut state, &config, black_box(&g)).unwrap());
        });
    }
    group.finish();
}

fn trajectory(c: &mut Criterion) {
    let oracle = quartic(10);
    let config = adam_config();
    let x0 = vec![0.25; 10];
    let mut group = c.benchmark_group("trajectory_1000");
    for level in [LogLevel::Summary, LogLevel::Full] {
        let opts = TrajectoryOptions {
            level: Some(level),
            ..Default::default()
        };
        group.bench_function(format!("{level:?}"), |b| {
            b.iter(|| run_trajectory(&oracle, &config, &x0, 1000, 7, 0, &opts).unwrap())
        });
    }
    group.finish();
}

fn lemma_checks(c: &mut Criterion) {
    let case = sequence_case(512);
    c.bench_function("momentum_ratio_512", |b| {
        b.iter(|| check_momentum_ratio(black_box(&case)).unwrap())
    });
    c.bench_function("sum_ratio_log_512", |b| b.iter(|| check_sum_ratio_log(black_box(&case)).unwrap()));
    c.bench_function("sum_ratio_sqrt_512", |b| b.iter(|| check_sum_ratio_sqrt(black_box(&case)).unwrap()));
}

criterion_group!(benches, step, trajectory, lemma_checks);
criterion_main!(benches);
