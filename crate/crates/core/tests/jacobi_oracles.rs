mod common;

use std::sync::Arc;

use common::*;
use geodom::builtins::{Euclidean, PolynomialY};
use geodom::convexity::Status;
use geodom::domain::Region;
use geodom::error::GeodomError;
use geodom::gallery;
use geodom::jacobi::{self, LagrangianProblem};
use geodom::problem::{self, LagrangianDef, Named};

#[test]
fn composition_law_for_the_free_particle() {
    let mut def = gallery::load("free_particle_quadrant").unwrap();
    def.lagrangian.as_mut().unwrap().energy = 1.0;
    let p = def.build().unwrap();
    let direct = problem::run_solve(&p).unwrap().report;
    let out = problem::run_jacobi(&p).unwrap();
    let traj = out.trajectory.unwrap();
    assert_eq!(traj.samples.len(), direct.path.nodes().len());
    for (s, x) in traj.samples.iter().zip(direct.path.nodes()) {
        for (a, b) in s.x.iter().zip(x) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn free_particle_moves_at_constant_speed() {
    let p = gallery_problem("free_particle_quadrant");
    let out = problem::run_jacobi(&p).unwrap();
    assert_eq!(out.exit_code(), 0);
    let traj = out.trajectory.unwrap();
    for s in &traj.speeds {
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }
    assert!((traj.duration() - 2f64.sqrt()).abs() < 1e-6);
}

#[test]
fn harmonic_energy_is_conserved() {
    let p = gallery_problem("harmonic_half_plane");
    let out = problem::run_jacobi(&p).unwrap();
    assert_eq!(out.exit_code(), 0);
    assert!(out.checks.energy_spread.unwrap() < 1e-5);
    let traj = out.trajectory.unwrap();
    for e in &traj.energy_profile {
        assert!((e - 2.0).abs() < 1e-5, "{e}");
    }
}

#[test]
fn harmonic_trajectory_against_shooting() {
    let p = gallery_problem("harmonic_half_plane");
    let traj = problem::run_jacobi(&p).unwrap().trajectory.unwrap();
    let (th, t, speed) = shoot_harmonic(&[-1.0, 0.5], &[1.0, 0.5], 2.0, (0.3, 1.0));
    assert!((traj.duration() - t).abs() < 1e-4);
    let v0 = &traj.samples[0].v;
    assert!((v0[0] - speed * th.cos()).abs() < 1e-3 && (v0[1] - speed * th.sin()).abs() < 1e-3);
}

#[test]
fn jhes_identity_on_harmonic_half_plane() {
    let p = gallery_problem("harmonic_half_plane");
    let prob = p.lagrangian.as_ref().unwrap();
    let region = Region::new(vec![-1.3, 0.0], vec![1.3, 1.3]).unwrap();
    let pts = jacobi::sample_region(prob, &p.barrier, &region, 50, 11);
    assert_eq!(pts.len(), 50);
    assert!(jacobi::hessian_transform_check(prob, &p.barrier, &pts, 4, 11).unwrap() < 1e-5);
}

#[test]
fn energy_below_the_potential_on_the_seed_is_rejected() {
    let mut def = gallery::load("harmonic_half_plane").unwrap();
    def.lagrangian.as_mut().unwrap().energy = 0.5;
    let err = problem::run_jacobi(&def.build().unwrap()).unwrap_err();
    assert!(matches!(err, GeodomError::EnergyLevel { .. }), "{err}");
    assert!(err.to_string().contains("energy level"));
}

#[test]
fn attracting_boundary_fails_the_compatibility_check() {
    let mut def = gallery::load("harmonic_half_plane").unwrap();
    def.lagrangian = Some(LagrangianDef {
        potential: Named {
            name: "polynomial_y".into(),
            params: [("linear".to_string(), -1.0)].into_iter().collect(),
        },
        energy: 3.0,
    });
    let out = problem::run_jacobi(&def.build().unwrap()).unwrap();
    assert_eq!(out.checks.rep.verdict.status, Status::Fail);
    assert!(out.solve.converged);
    assert_eq!(out.exit_code(), 6);
}

#[test]
fn rep_level_values_match_closed_form() {
    let b = gallery_problem("half_plane").barrier;
    let prob = LagrangianProblem::new(Euclidean::manifold(2), Arc::new(PolynomialY { linear: -1.0, quadratic: 0.0 }), 10.0).unwrap();
    let region = Region::new(vec![-2.0, 0.0], vec![2.0, 2.0]).unwrap();
    let r = jacobi::rep_check(&prob, &b, b.schedule().levels(), 16, 0, &region).unwrap();
    for (a, m) in &r.per_level {
        assert!((m - 1.0 / a).abs() < 1e-9 / a, "{a}: {m}");
    }
}
