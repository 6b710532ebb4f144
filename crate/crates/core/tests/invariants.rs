mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use geodom::builtins::UnitDisk;
use geodom::convexity;
use geodom::domain::Barrier;
use geodom::field::ScalarField;
use geodom::gallery;
use geodom::pathspace::{self, DiscretePath};
use geodom::problem::{self, ProblemDef};
use geodom::solver::{self, SolverConfig};

struct Scaled(f64, Arc<dyn ScalarField>);

impl ScalarField for Scaled {
    fn value(&self, x: &[f64]) -> f64 {
        self.0 * self.1.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.1.gradient(x, out);
        out.iter_mut().for_each(|v| *v *= self.0);
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        self.1.hessian(x, out);
        out.iter_mut().for_each(|v| *v *= self.0);
    }
}

fn barrier_index() -> impl Strategy<Value = (usize, u64)> {
    (0..gallery_barriers().len(), any::<u64>())
}

fn sample_path(idx: usize, seed: u64) -> (Barrier, DiscretePath) {
    let (_, b, p, q, w) = gallery_barriers().swap_remove(idx);
    let path = random_path(&b, &p, &q, &w, 24, &mut ChaCha8Rng::seed_from_u64(seed));
    (b, path)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn reversal_leaves_the_energy_unchanged((idx, seed) in barrier_index(), eps in 1e-6f64..1.0) {
        let (b, path) = sample_path(idx, seed);
        let fwd = pathspace::penalized_energy(&path, &b, eps).unwrap();
        let bwd = pathspace::penalized_energy(&path.reversed(), &b, eps).unwrap();
        prop_assert!((fwd.f_eps() - bwd.f_eps()).abs() <= 1e-12 * fwd.f_eps().abs().max(1.0));
        let k = path.k();
        for i in 0..k - 1 {
            for c in 0..path.dim() {
                let (a, r) = (fwd.grad[i][c], bwd.grad[k - 2 - i][c]);
                prop_assert!((a - r).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn penalty_is_linear_in_eps((idx, seed) in barrier_index(), e1 in 1e-6f64..1.0, e2 in 1e-6f64..1.0) {
        let (b, path) = sample_path(idx, seed);
        let a = pathspace::penalized_energy(&path, &b, e1).unwrap();
        let c = pathspace::penalized_energy(&path, &b, e2).unwrap();
        prop_assert_eq!(a.f, c.f);
        prop_assert!((a.penalty / e1 - c.penalty / e2).abs() <= 1e-12 * (a.penalty / e1));
    }

    #[test]
    fn stages_keep_endpoints_pinned((idx, seed) in barrier_index(), eps in 1e-4f64..0.5) {
        let (b, path) = sample_path(idx, seed);
        let cfg = SolverConfig { max_inner_iters: 50, ..SolverConfig::default() };
        let out = solver::minimize_stage(&path, &b, eps, &cfg).unwrap();
        prop_assert_eq!(out.path.p(), path.p());
        prop_assert_eq!(out.path.q(), path.q());
        let before = pathspace::penalized_energy(&path, &b, eps).unwrap().f_eps();
        prop_assert!(out.eval.f_eps() <= before + 1e-9 * before.abs().max(1.0));
    }

    #[test]
    fn hessian_ratio_ignores_barrier_scale(c in 0.01f64..100.0, r in 0.05f64..0.95, th in 0.0f64..std::f64::consts::TAU, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
        prop_assume!(vx.abs() + vy.abs() > 1e-3);
        let m = geodom::builtins::Euclidean::manifold(2);
        let base = Barrier::new(m.clone(), Arc::new(UnitDisk));
        let scaled = Barrier::new(m, Arc::new(Scaled(c, Arc::new(UnitDisk))));
        let x = [r * th.cos(), r * th.sin()];
        let a = convexity::hessian_ratio(&base, &x, &[vx, vy]).unwrap();
        let s = convexity::hessian_ratio(&scaled, &x, &[vx, vy]).unwrap();
        prop_assert!((a - s).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn straight_paths_have_half_squared_distance(p in prop::array::uniform2(-5.0f64..5.0), q in prop::array::uniform2(-5.0f64..5.0), k in 2usize..50) {
        let m = geodom::builtins::Euclidean::manifold(2);
        let path = DiscretePath::linear(&m, &p, &q, k, &[]).unwrap();
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        prop_assert!((pathspace::energy(&path, &m).unwrap() - 0.5 * d2).abs() <= 1e-12 * d2.max(1.0));
    }

    #[test]
    fn flow_lands_on_the_shifted_level(r in 0.2f64..0.95, th in 0.0f64..std::f64::consts::TAU, frac in 0.0f64..0.9) {
        let b = gallery_problem("unit_disk").barrier;
        let x = [r * th.cos(), r * th.sin()];
        let s = frac * b.phi(&x);
        let y = b.flow(&x, s, geodom::domain::DEFAULT_FLOW_STEPS).unwrap();
        prop_assert!((b.phi(&y) - (b.phi(&x) - s)).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn solves_are_deterministic(name in prop::sample::select(vec!["quadrant_sqrtxy", "half_plane", "punctured_plane", "unit_disk"]), k in 8usize..40) {
        let mut def = gallery::load(name).unwrap();
        def.solver.k_nodes = k;
        let p = def.build().unwrap();
        let a = problem::run_solve(&p).unwrap();
        let b = problem::run_solve(&p).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn hash_survives_reformatting(name in prop::sample::select(gallery::names().collect::<Vec<_>>())) {
        let def = gallery::load(name).unwrap();
        let pretty = serde_json::to_string_pretty(&def).unwrap();
        let again = ProblemDef::from_json(&pretty).unwrap();
        prop_assert_eq!(def.hash(), again.hash());
        prop_assert_eq!(def.hash().len(), 64);
    }
}
