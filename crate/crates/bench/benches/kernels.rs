use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hdsa_bench::{map_state, problem, setup};
use hdsa_core::forward::SolveCounter;
use hdsa_core::hdsa::run_pipeline;
use hdsa_core::lowrank::build_lowrank;
use hdsa_core::newton::{solve_map, SolverConfig};
use std::hint::black_box;

fn state_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("state_solve");
    for n in [16, 32] {
        let s = setup(n);
        let m = s.model.prior_mean().clone();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| s.model.solve_state(black_box(&m), &s.params, &SolveCounter::new()).unwrap())
        });
    }
    g.finish();
}

fn hessian_apply(c: &mut Criterion) {
    let mut g = c.benchmark_group("hessian_apply");
    for n in [16, 32] {
        let st = map_state(n, 1);
        let v = st.m().clone();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| st.hessian_apply(black_box(&v))));
    }
    g.finish();
}

fn map_solve(c: &mut Criterion) {
    let (p, m) = problem(16, 3);
    c.bench_function("map_solve/16", |b| {
        b.iter(|| solve_map(&p, black_box(&m), &SolverConfig::default(), &SolveCounter::new()).unwrap())
    });
}

fn lanczos(c: &mut Criterion) {
    let st = map_state(16, 2);
    c.bench_function("lanczos_50/16", |b| b.iter(|| build_lowrank(&st, 50, black_box(7)).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let s = setup(8);
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("8x8_ns4", |b| b.iter(|| run_pipeline(&s, 4, black_box(1)).unwrap()));
    g.finish();
}

criterion_group!(benches, state_solve, hessian_apply, map_solve, lanczos, pipeline);
criterion_main!(benches);
