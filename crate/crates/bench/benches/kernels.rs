use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use ranslice_bench::{blocking_scenario, default_instance, subproblem};
use ranslice_core::queueing::{blocking_all_exact, blocking_all_mc};
use ranslice_core::slicing::{run_slot, schedule_minislot, Algorithm, SlicingConfig};
use ranslice_core::solver::{check_feasibility, solve, SolverOptions};

fn solver(c: &mut Criterion) {
    let opts = SolverOptions::default();
    let small = subproblem(&[4], 3, 1);
    let full = subproblem(&[4, 6, 8], 8, 1);
    c.bench_function("solve/one_slice", |b| b.iter(|| solve(black_box(&small), &opts)));
    c.bench_function("solve/three_slices", |b| b.iter(|| solve(black_box(&full), &opts)));
    c.bench_function("feasibility/three_slices", |b| b.iter(|| check_feasibility(black_box(&full), &opts)));
}

fn blocking(c: &mut Criterion) {
    let sc = blocking_scenario(3, 3, 6.0);
    c.bench_function("blocking/exact", |b| b.iter(|| blocking_all_exact(black_box(&sc))));
    c.bench_function("blocking/mc_1e5", |b| b.iter(|| blocking_all_mc(black_box(&sc), 100_000, 7)));
}

fn slot(c: &mut Criterion) {
    let inst = default_instance(1);
    let cfg = SlicingConfig::new(Algorithm::IaraAb, 2, 1);
    let run = run_slot(&inst, &cfg).expect("slot decision");
    let mut g = c.benchmark_group("slot");
    g.sample_size(10);
    g.bench_function("decision_m2", |b| b.iter(|| run_slot(black_box(&inst), &cfg)));
    g.bench_function("minislot", |b| {
        b.iter_batched(|| run.decision.clone(), |d| schedule_minislot(&inst, &cfg, &d, 0), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, solver, blocking, slot);
criterion_main!(benches);
