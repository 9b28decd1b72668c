//! Cross-module spot checks: reliability/efficiency of the indicators,
//! their discrete counterparts on refinement pairs, and the behavior of
//! the marking criterion on the benchmark problems.

use goafem::driver::{run_adaptive, RunConfig, Strategy};
use goafem::estimator::{data_resolution, edge_indicators, oscillation};
use goafem::fem::{self, DiscreteSolution};
use goafem::marking::{mark_maximum, Tails};
use goafem::mesh::{EdgeFate, Lineage, MarkSet, Mesh};
use goafem::problem::{builtin_problem, ProblemName, ProblemSpec, Side};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn energy_diff(
    coarse: &Mesh,
    fine: &Mesh,
    lineage: &Lineage,
    spec: &ProblemSpec,
    u_coarse: &DiscreteSolution,
    u_fine: &DiscreteSolution,
) -> f64 {
    let prolonged = fem::prolongate(coarse, u_coarse, fine, lineage).unwrap();
    let mut diff = u_fine.clone();
    for (d, c) in diff.coeffs_mut().iter_mut().zip(prolonged.coeffs()) {
        *d -= c;
    }
    fem::energy_norm(fine, spec, &diff).unwrap()
}

/// Coarse edges that disappeared under the refinement.
fn bisected_edges(lineage: &Lineage) -> MarkSet {
    lineage
        .edge_fates
        .iter()
        .enumerate()
        .filter(|(_, f)| matches!(f, EdgeFate::Bisected { .. }))
        .map(|(e, _)| e)
        .collect()
}

/// Mask of coarse triangles that were refined away.
fn refined_triangles(lineage: &Lineage) -> Vec<bool> {
    let mut child_count = vec![0usize; lineage.coarse_triangles];
    for &parent in &lineage.parent {
        child_count[parent] += 1;
    }
    child_count.iter().map(|&c| c > 1).collect()
}

#[test]
fn reliability_and_efficiency_stay_bounded_along_a_run() {
    for p in [1usize, 2] {
        let mut config = RunConfig::new(ProblemName::ZShape, p, Strategy::Maximum);
        config.max_dofs = 1200;
        config.max_iters = 40;
        let mut snapshots: Vec<(Mesh, DiscreteSolution)> = Vec::new();
        run_adaptive(&config, |view| {
            snapshots.push((view.mesh.clone(), view.primal.clone()));
        })
        .unwrap();
        let (_, spec) = builtin_problem(ProblemName::ZShape);

        let mut rel = Vec::new();
        let mut eff = Vec::new();
        for (mesh, u) in &snapshots {
            // reference: two extra uniform refinements
            let (m1, l1) = mesh.refine_uniform().unwrap();
            let (m2, l2) = m1.refine_uniform().unwrap();
            let u_ref = fem::solve_problem(&m2, &spec, p, Side::Primal).unwrap();
            let u_on_m1 = fem::prolongate(mesh, u, &m1, &l1).unwrap();
            let u_on_m2 = fem::prolongate(&m1, &u_on_m1, &m2, &l2).unwrap();
            let mut diff = u_ref.clone();
            for (d, c) in diff.coeffs_mut().iter_mut().zip(u_on_m2.coeffs()) {
                *d -= c;
            }
            let err = fem::energy_norm(&m2, &spec, &diff).unwrap();
            let eta = edge_indicators(mesh, &spec, u, Side::Primal)
                .unwrap()
                .total_sq()
                .sqrt();
            let osc = oscillation(mesh, &spec, Side::Primal, p).total_sq().sqrt();
            rel.push(err / eta);
            eff.push(eta / (err + osc));
        }
        let max_rel = rel.iter().cloned().fold(0.0f64, f64::max);
        let max_eff = eff.iter().cloned().fold(0.0f64, f64::max);
        assert!(max_rel.is_finite() && max_rel < 10.0, "p={p}: C_rel ~ {max_rel}");
        assert!(max_eff.is_finite() && max_eff < 10.0, "p={p}: C_eff ~ {max_eff}");
        println!("p={p}: reliability ratio <= {max_rel:.3}, efficiency ratio <= {max_eff:.3}");
    }
}

#[test]
fn discrete_reliability_and_local_efficiency_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for p in [1usize, 2] {
        let (mesh0, spec) = builtin_problem(ProblemName::GoalSquare);
        let mut mesh = mesh0.refine_uniform().unwrap().0;
        let mut c_drel_max = 0.0f64;
        let mut c_deff_max = 0.0f64;
        for _ in 0..20 {
            let u_coarse = fem::solve_problem(&mesh, &spec, p, Side::Primal).unwrap();
            let eta = edge_indicators(&mesh, &spec, &u_coarse, Side::Primal).unwrap();
            let rho = data_resolution(&mesh, &spec, Side::Primal, p);
            let n = mesh.n_edges();
            let marks: MarkSet = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..n)).collect();
            let (fine, lineage) = mesh.refine(&marks).unwrap();
            let u_fine = fem::solve_problem(&fine, &spec, p, Side::Primal).unwrap();

            let diff = energy_diff(&mesh, &fine, &lineage, &spec, &u_coarse, &u_fine);
            let removed_eta_sq = eta.subset_sq(&bisected_edges(&lineage));
            let removed_rho_sq = rho.masked_sq(&refined_triangles(&lineage));

            // discrete reliability: |u_H - u_h|^2 <= C eta_H(E_H \ E_h)^2
            if removed_eta_sq > 0.0 {
                c_drel_max = c_drel_max.max(diff * diff / removed_eta_sq);
            }
            // discrete local efficiency:
            // eta_H(E_H \ E_h)^2 <= C (|u_H - u_h|^2 + rho_H(T_H \ T_h)^2)
            let denom = diff * diff + removed_rho_sq;
            if denom > 0.0 {
                c_deff_max = c_deff_max.max(removed_eta_sq / denom);
            }
            mesh = fine;
        }
        println!("p={p}: C_drel <= {c_drel_max:.3}, C_deff <= {c_deff_max:.3}");
        assert!(c_drel_max.is_finite() && c_drel_max < 100.0);
        assert!(c_deff_max.is_finite() && c_deff_max < 100.0);
    }
}

#[test]
fn zshape_first_iteration_marks_cover_the_maximal_tail() {
    let (mesh, spec) = builtin_problem(ProblemName::ZShape);
    let u = fem::solve_problem(&mesh, &spec, 1, Side::Primal).unwrap();
    let eta = edge_indicators(&mesh, &spec, &u, Side::Primal).unwrap();
    let tails = Tails::compute(&mesh).unwrap();
    let marks = mark_maximum(&tails, &eta, 0.5).unwrap();
    assert!(!marks.is_empty());
    let max_sq = (0..mesh.n_edges())
        .map(|e| tails.tail_sum_sq(&eta, e))
        .fold(0.0f64, f64::max);
    // An edge attaining the maximal tail sum belongs to the marked set.
    let attains = marks
        .ids()
        .iter()
        .any(|&e| tails.tail_sum_sq(&eta, e) >= max_sq * (1.0 - 1e-12));
    assert!(attains, "marks: {:?}", marks.ids());
}

#[test]
fn pythagoras_identity_along_an_adaptive_run() {
    let mut config = RunConfig::new(ProblemName::GoalSquare, 1, Strategy::GoafemMaximum);
    config.max_iters = 8;
    let mut prev_energy: Option<f64> = None;
    let mut worst = 0.0f64;
    run_adaptive(&config, |view| {
        if let (Some((coarse, u_coarse, lineage)), Some(prev)) = (view.previous, prev_energy) {
            let diff = energy_diff(coarse, view.mesh, lineage, view.spec, u_coarse, view.primal);
            let lhs = view.record.energy_uu - prev;
            let rel = (lhs - diff * diff).abs() / view.record.energy_uu.max(1e-300);
            worst = worst.max(rel);
        }
        prev_energy = Some(view.record.energy_uu);
    })
    .unwrap();
    assert!(worst <= 1e-10, "pythagoras residual {worst}");
}
