//! Parallel vs sequential kernels on an adaptively refined benchmark mesh.
//!
//! Run with `cargo bench -p goafem`. The parallel variants go through the
//! rayon pool (the default `parallel` feature); the `_seq` variants force
//! the sequential code path. Outputs are bitwise identical either way,
//! which the library's unit tests assert.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use goafem::driver::{run_adaptive, RunConfig, Strategy};
use goafem::estimator::{edge_indicators, edge_indicators_seq};
use goafem::fem::{self, assemble_system, assemble_system_seq, DiscreteSolution};
use goafem::mesh::Mesh;
use goafem::problem::{builtin_problem, ProblemName, ProblemSpec, Side};

struct Fixture {
    mesh: Mesh,
    spec: ProblemSpec,
    solutions: [DiscreteSolution; 2],
}

/// Z-shape mesh after an adaptive run to a few thousand elements, with the
/// P1 and P2 solutions on it.
fn fixture() -> Fixture {
    let mut config = RunConfig::new(ProblemName::ZShape, 1, Strategy::Maximum);
    config.max_dofs = 4_000;
    config.max_iters = 60;
    let mut mesh = None;
    run_adaptive(&config, |view| {
        if view.marks.is_none() {
            mesh = Some(view.mesh.clone());
        }
    })
    .expect("fixture run");
    let mesh = mesh.expect("final mesh");
    let (_, spec) = builtin_problem(ProblemName::ZShape);
    let solutions = [
        fem::solve_problem(&mesh, &spec, 1, Side::Primal).expect("p1 solve"),
        fem::solve_problem(&mesh, &spec, 2, Side::Primal).expect("p2 solve"),
    ];
    Fixture {
        mesh,
        spec,
        solutions,
    }
}

fn bench_assembly(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("assemble");
    group.sample_size(10);
    for p in [1usize, 2] {
        group.bench_with_input(BenchmarkId::new("parallel", p), &p, |b, &p| {
            b.iter(|| assemble_system(&fx.mesh, &fx.spec, p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", p), &p, |b, &p| {
            b.iter(|| assemble_system_seq(&fx.mesh, &fx.spec, p).unwrap())
        });
    }
    group.finish();
}

fn bench_indicators(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("edge_indicators");
    group.sample_size(10);
    for p in [1usize, 2] {
        let u = &fx.solutions[p - 1];
        group.bench_with_input(BenchmarkId::new("parallel", p), &p, |b, _| {
            b.iter(|| edge_indicators(&fx.mesh, &fx.spec, u, Side::Primal).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", p), &p, |b, _| {
            b.iter(|| edge_indicators_seq(&fx.mesh, &fx.spec, u, Side::Primal).unwrap())
        });
    }
    group.finish();
}

fn bench_adaptive_step(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("solve_estimate");
    group.sample_size(10);
    group.bench_function("p1_full_step", |b| {
        b.iter(|| {
            let u = fem::solve_problem(&fx.mesh, &fx.spec, 1, Side::Primal).unwrap();
            edge_indicators(&fx.mesh, &fx.spec, &u, Side::Primal).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_assembly, bench_indicators, bench_adaptive_step);
criterion_main!(benches);
