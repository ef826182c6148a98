use std::time::Duration;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nfmimo_bench::reference_fixture;
use nfmimo_core::forward::{LinearOperator, Operator, Weighting};
use nfmimo_core::recon_direct::{adjoint_image_with, backprojection_with};
use nfmimo_core::recon_tv::tv_solve_with;
use nfmimo_core::TvParams;

fn operators(c: &mut Criterion) {
    let (config, scene, y) = reference_fixture(1);
    let op = Operator::new(&config).unwrap();
    let phase_op = Operator::with_weighting(&config, Weighting::PhaseOnly).unwrap();

    let mut g = c.benchmark_group("reference");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    g.bench_function("forward", |b| {
        b.iter(|| op.forward(black_box(scene.volume.values())))
    });
    g.bench_function("adjoint", |b| b.iter(|| op.adjoint(black_box(y.values()))));
    g.bench_function("adjoint_image", |b| {
        b.iter(|| adjoint_image_with(&op, black_box(&y)).unwrap())
    });
    g.bench_function("backprojection", |b| {
        b.iter(|| backprojection_with(&phase_op, black_box(&y)).unwrap())
    });
    g.finish();
}

/// One reweighting step with a short CG run; full solves take tens of seconds.
fn tv_step(c: &mut Criterion) {
    let (config, _, y) = reference_fixture(2);
    let op = Operator::new(&config).unwrap();
    let params = TvParams {
        outer_iters: 1,
        cg_iters: 5,
        ..TvParams::default()
    };
    let mut g = c.benchmark_group("tv");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    g.bench_function("outer_step_cg5", |b| {
        b.iter(|| tv_solve_with(&op, config.grid.dims(), black_box(&y), &params).unwrap())
    });
    g.finish();
}

criterion_group!(benches, operators, tv_step);
criterion_main!(benches);
