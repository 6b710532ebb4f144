//! Minimization of the penalized energy at fixed ε and the ε → 0
//! continuation that produces geodesics of the open domain.
//!
//! The inner iteration is a gradient method in the discrete H¹ metric of path
//! space: the node gradient is preconditioned by the block-tridiagonal
//! stiffness matrix of the energy (plus the Gauss–Newton part of the
//! penalty), the step length comes from a Barzilai–Borwein estimate and is
//! backtracked until the Armijo condition holds and the trial path stays in D.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Barrier;
use crate::error::{GeodomError, Result};
use crate::manifold::Point;
use crate::pathspace::{self, DiscretePath, PathEval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub eps0: f64,
    pub eps_ratio: f64,
    pub eps_min: f64,
    pub grad_tol: f64,
    pub max_inner_iters: usize,
    pub max_outer_stages: usize,
    pub k_nodes: usize,
    pub seed: u64,
    /// Final min φ must stay above this fraction of the first stage's.
    pub beta_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps0: 0.5,
            eps_ratio: 0.5,
            eps_min: 1e-8,
            grad_tol: 1e-8,
            max_inner_iters: 5000,
            max_outer_stages: 40,
            k_nodes: 100,
            seed: 0,
            beta_floor: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GeodomError::InvalidArgument(msg.to_string()));
        if !(self.eps0 > 0.0 && self.eps0 <= 1.0) {
            return bad("eps0 must lie in (0, 1]");
        }
        if !(self.eps_ratio > 0.0 && self.eps_ratio < 1.0) {
            return bad("eps_ratio must lie in (0, 1)");
        }
        if !(self.eps_min > 0.0 && self.grad_tol > 0.0 && self.beta_floor > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.k_nodes < 4 {
            return bad("k_nodes must be at least 4");
        }
        if self.max_outer_stages == 0 || self.max_inner_iters == 0 {
            return bad("iteration caps must be positive");
        }
        Ok(())
    }

    /// ε for stage m.
    pub fn eps_at(&self, stage: usize) -> f64 {
        self.eps0 * self.eps_ratio.powi(stage as i32)
    }
}

/// How the initial path is built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSeed {
    /// Extra turns per periodic axis added to q before interpolation.
    #[serde(default)]
    pub winding: Vec<i64>,
}

impl PathSeed {
    pub fn winding(winding: Vec<i64>) -> Self {
        Self { winding }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub path: DiscretePath,
    pub eval: PathEval,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub eps: f64,
    pub f_eps: f64,
    pub f: f64,
    pub min_phi: f64,
    pub el_residual: f64,
    pub e_spread: f64,
    pub max_lambda: f64,
    pub max_speed_sq: f64,
    pub iterations: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
    BoundaryCollapse,
}

impl SolveStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            SolveStatus::Converged => 0,
            SolveStatus::NotConverged => 2,
            SolveStatus::BoundaryCollapse => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub converged: bool,
    pub failure_reason: Option<String>,
    pub path: DiscretePath,
    pub winding: Vec<i64>,
    /// Unpenalized discrete energy of the final path.
    pub f_value: f64,
    pub length: f64,
    pub el_residual: f64,
    pub e_spread: f64,
    /// Smallest min φ over all stages.
    pub beta: f64,
    pub history: Vec<StageRecord>,
}

impl SolveReport {
    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for rec in &self.history {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn flatten(nodes: &[Point]) -> Vec<f64> {
    nodes.iter().flatten().copied().collect()
}

/// Solves A z = r for the block-tridiagonal preconditioner of the interior
/// nodes: diagonal blocks K(g_{j−½} + g_{j+½}) + 6ε/(Kφⱼ⁴) dφⱼ dφⱼᵀ,
/// off-diagonal blocks −K g_{j+½}.
fn precondition(path: &DiscretePath, b: &Barrier, eps: f64, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = b.manifold();
    let n = path.dim();
    let k = path.k();
    let kf = k as f64;
    let nodes = path.nodes();
    let mut seg_g = Vec::with_capacity(k);
    let mut d = vec![0.0; n];
    let mut mid = vec![0.0; n];
    let mut buf = vec![0.0; n * n];
    for i in 0..k {
        m.difference_into(&nodes[i], &nodes[i + 1], &mut d);
        for c in 0..n {
            mid[c] = nodes[i][c] + 0.5 * d[c];
        }
        m.metric_into(&mid, &mut buf);
        seg_g.push(DMatrix::from_row_slice(n, n, &buf));
    }
    let mut dphi = vec![0.0; n];
    let diag: Vec<DMatrix<f64>> = (1..k)
        .map(|j| {
            let mut a = (&seg_g[j - 1] + &seg_g[j]) * kf;
            if eps > 0.0 {
                b.field().gradient(&nodes[j], &mut dphi);
                let phi = b.phi(&nodes[j]);
                let v = DVector::from_column_slice(&dphi);
                a += (&v * v.transpose()) * (6.0 * eps / (kf * phi.powi(4)));
            }
            a
        })
        .collect();
    let off = |j: usize| -&seg_g[j] * kf; // couples interior j and j + 1

    let solve = |a: &DMatrix<f64>, r: DMatrix<f64>| -> Result<DMatrix<f64>> {
        a.clone()
            .cholesky()
            .map(|c| c.solve(&r))
            .or_else(|| a.clone().lu().solve(&r))
            .ok_or_else(|| GeodomError::InvalidArgument("singular path preconditioner".into()))
    };

    let count = k - 1;
    let mut c_prime: Vec<DMatrix<f64>> = Vec::with_capacity(count);
    let mut d_prime: Vec<DMatrix<f64>> = Vec::with_capacity(count);
    for t in 0..count {
        let j = t + 1;
        let r = DMatrix::from_column_slice(n, 1, &rhs[t]);
        let (a, r) = if t == 0 {
            (diag[0].clone(), r)
        } else {
            let l = off(j - 1);
            (&diag[t] - &l * &c_prime[t - 1], r - &l * &d_prime[t - 1])
        };
        let upper = if t + 1 < count { off(j) } else { DMatrix::zeros(n, n) };
        let mut both = DMatrix::zeros(n, n + 1);
        both.columns_mut(0, n).copy_from(&upper);
        both.column_mut(n).copy_from(&r.column(0));
        let sol = solve(&a, both)?;
        c_prime.push(sol.columns(0, n).into_owned());
        d_prime.push(sol.columns(n, 1).into_owned());
    }
    let mut z = vec![DMatrix::zeros(n, 1); count];
    for t in (0..count).rev() {
        z[t] = if t + 1 < count {
            &d_prime[t] - &c_prime[t] * &z[t + 1]
        } else {
            d_prime[t].clone()
        };
    }
    Ok(z.into_iter().map(|v| v.as_slice().to_vec()).collect())
}

fn admissible(path: &DiscretePath, b: &Barrier) -> bool {
    path.nodes().iter().all(|x| b.contains(x)) && pathspace::check_segments(path, b).is_ok()
}

/// Drives the interior nodes towards a critical point of f_ε. Every accepted
/// step satisfies the Armijo condition (up to round-off slack) and keeps all
/// nodes and segments inside D.
pub fn minimize_stage(path0: &DiscretePath, b: &Barrier, eps: f64, cfg: &SolverConfig) -> Result<StageOutcome> {
    let m = b.manifold();
    pathspace::check_segments(path0, b)?;
    let mut path = path0.clone();
    let mut ev = pathspace::penalized_energy(&path, b, eps)?;
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let slack_scale = 8.0 * path.k() as f64 * f64::EPSILON;
    let mut iterations = 0;
    let mut grad_norm = pathspace::grad_dual_norm(&path, m, &ev.grad)?;
    while iterations < cfg.max_inner_iters && grad_norm >= cfg.grad_tol {
        let pg = precondition(&path, b, eps, &ev.grad)?;
        let x_flat = flatten(&path.nodes()[1..path.k()]);
        let g_flat = flatten(&ev.grad);
        let pg_flat = flatten(&pg);
        let mut alpha = match &prev {
            Some((x0, g0, pg0)) => {
                let mut sy = 0.0;
                let mut ypy = 0.0;
                for i in 0..x_flat.len() {
                    let y = g_flat[i] - g0[i];
                    sy += (x_flat[i] - x0[i]) * y;
                    ypy += y * (pg_flat[i] - pg0[i]);
                }
                if sy > 0.0 && ypy > 0.0 {
                    (sy / ypy).clamp(1e-4, 4.0)
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let slope = -pathspace::dot_nested(&ev.grad, &pg);
        let f0 = ev.f_eps();
        let slack = slack_scale * (f0.abs() + 1.0);
        let mut accepted = None;
        for _ in 0..60 {
            let interior: Vec<Point> = path.nodes()[1..path.k()]
                .iter()
                .zip(&pg)
                .map(|(x, d)| x.iter().zip(d).map(|(a, b)| a - alpha * b).collect())
                .collect();
            let trial = path.with_interior(&interior)?;
            if admissible(&trial, b) {
                if let Ok(tev) = pathspace::penalized_energy(&trial, b, eps) {
                    if tev.f_eps() <= f0 + 1e-4 * alpha * slope + slack {
                        accepted = Some((trial, tev));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, tev)) = accepted else {
            break;
        };
        prev = Some((x_flat, g_flat, pg_flat));
        path = trial;
        ev = tev;
        iterations += 1;
        grad_norm = pathspace::grad_dual_norm(&path, m, &ev.grad)?;
    }
    Ok(StageOutcome {
        converged: grad_norm < cfg.grad_tol,
        path,
        eval: ev,
        iterations,
        grad_norm,
    })
}

/// Chart-linear seed in the requested winding class, with nodes below the
/// first level of the schedule pushed back up along the reverse flow.
pub fn seed_path(p: &[f64], q: &[f64], b: &Barrier, k: usize, seed: &PathSeed) -> std::result::Result<DiscretePath, (DiscretePath, String)> {
    let raw = DiscretePath::linear(b.manifold(), p, q, k, &seed.winding)
        .map_err(|e| (DiscretePath::new(vec![p.to_vec(), p.to_vec(), q.to_vec()]).unwrap(), format!("seed_invalid: {e}")))?;
    let a0 = b.schedule().first();
    let mut interior = Vec::with_capacity(k - 1);
    for x in &raw.nodes()[1..k] {
        let phi = b.phi(x);
        if !b.manifold().contains(x) || !(phi > 0.0) {
            return Err((raw, "seed_outside_domain".into()));
        }
        if phi < a0 && a0 < b.phi(p).max(b.phi(q)) {
            match b.move_to_level(x, a0) {
                Ok(y) => interior.push(y),
                Err(_) => return Err((raw, "seed_lift_failed".into())),
            }
        } else {
            interior.push(x.clone());
        }
    }
    let lifted = raw.with_interior(&interior).map_err(|e| (raw.clone(), e.to_string()))?;
    if pathspace::check_segments(&lifted, b).is_err() {
        return Err((lifted, "seed_segment_crossing".into()));
    }
    if !lifted.nodes().iter().all(|x| b.contains(x)) {
        return Err((lifted, "seed_outside_domain".into()));
    }
    Ok(lifted)
}

fn max_speed_sq(path: &DiscretePath, b: &Barrier) -> Result<f64> {
    let speeds = pathspace::node_speeds(path, b.manifold())?;
    Ok(speeds.iter().map(|v| v * v).fold(0.0, f64::max))
}

fn record(stage: usize, eps: f64, out: &StageOutcome, b: &Barrier) -> Result<StageRecord> {
    Ok(StageRecord {
        stage,
        eps,
        f_eps: out.eval.f_eps(),
        f: out.eval.f,
        min_phi: out.eval.min_phi,
        el_residual: out.path.k() as f64 * out.grad_norm,
        e_spread: out.eval.e_spread(),
        max_lambda: out.eval.max_lambda(),
        max_speed_sq: max_speed_sq(&out.path, b)?,
        iterations: out.iterations,
        inner_converged: out.converged,
    })
}

/// Number of consecutive geometric min φ decays that signal a collapse onto
/// the boundary.
pub const COLLAPSE_STAGES: usize = 5;
pub const COLLAPSE_RATIO: f64 = 0.95;

fn collapsing(history: &[StageRecord]) -> bool {
    if history.len() <= COLLAPSE_STAGES {
        return false;
    }
    history[history.len() - COLLAPSE_STAGES - 1..]
        .windows(2)
        .all(|w| w[1].min_phi < COLLAPSE_RATIO * w[0].min_phi)
}

/// Runs the ε-continuation from `init` and reports the limit path.
pub fn solve(p: &[f64], q: &[f64], b: &Barrier, cfg: &SolverConfig, init: &PathSeed) -> Result<SolveReport> {
    cfg.validate()?;
    let m = b.manifold();
    m.check_point(p)?;
    m.check_point(q)?;
    for (node, x) in [(0, p), (cfg.k_nodes, q)] {
        let phi = b.phi(x);
        if !(phi > 0.0) {
            return Err(GeodomError::BoundaryViolation { node, phi });
        }
    }

    let trivial = m.difference(p, q).iter().all(|d| *d == 0.0) && init.winding.iter().all(|w| *w == 0);
    if trivial {
        let path = DiscretePath::new(vec![p.to_vec(); cfg.k_nodes + 1])?;
        return finish(path, b, cfg, Vec::new(), None);
    }

    let path = match seed_path(p, q, b, cfg.k_nodes, init) {
        Ok(path) => path,
        Err((path, reason)) => {
            return Ok(SolveReport {
                status: SolveStatus::NotConverged,
                converged: false,
                failure_reason: Some(reason),
                winding: path.winding(m),
                f_value: pathspace::energy(&path, m).unwrap_or(f64::NAN),
                length: pathspace::length(&path, m).unwrap_or(f64::NAN),
                el_residual: f64::NAN,
                e_spread: f64::NAN,
                beta: f64::NAN,
                path,
                history: Vec::new(),
            })
        }
    };
    continuation(path, b, cfg)
}

/// The ε-continuation from an explicit initial path.
pub fn continuation(mut path: DiscretePath, b: &Barrier, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let mut history = Vec::new();
    let mut last_converged = false;
    for stage in 0..cfg.max_outer_stages {
        let eps = cfg.eps_at(stage);
        let out = minimize_stage(&path, b, eps, cfg)?;
        history.push(record(stage, eps, &out, b)?);
        path = out.path;
        last_converged = out.converged;
        if collapsing(&history) {
            return finish(path, b, cfg, history, Some((SolveStatus::BoundaryCollapse, "boundary_collapse")));
        }
        if eps <= cfg.eps_min {
            break;
        }
    }
    let last = *history.last().unwrap();
    let failure = if last.eps > cfg.eps_min {
        Some((SolveStatus::NotConverged, "stage_cap"))
    } else if !last_converged {
        Some((SolveStatus::NotConverged, "inner_not_converged"))
    } else if !(last.el_residual < 10.0 * cfg.grad_tol * path.k() as f64) {
        Some((SolveStatus::NotConverged, "residual_above_tolerance"))
    } else if !(last.min_phi >= cfg.beta_floor * history[0].min_phi) {
        Some((SolveStatus::NotConverged, "beta_floor"))
    } else {
        None
    };
    finish(path, b, cfg, history, failure)
}

fn finish(
    path: DiscretePath,
    b: &Barrier,
    cfg: &SolverConfig,
    history: Vec<StageRecord>,
    failure: Option<(SolveStatus, &str)>,
) -> Result<SolveReport> {
    let m = b.manifold();
    let eps = history.last().map_or(cfg.eps_min, |r| r.eps);
    let ev = pathspace::penalized_energy(&path, b, eps)?;
    let el = if path.k() >= 4 {
        path.k() as f64 * pathspace::grad_dual_norm(&path, m, &ev.grad)?
    } else {
        f64::NAN
    };
    let beta = history
        .iter()
        .map(|r| r.min_phi)
        .fold(ev.min_phi, f64::min);
    let (status, reason) = match failure {
        Some((s, r)) => (s, Some(r.to_string())),
        None => (SolveStatus::Converged, None),
    };
    Ok(SolveReport {
        status,
        converged: status == SolveStatus::Converged,
        failure_reason: reason,
        winding: path.winding(m),
        f_value: ev.f,
        length: pathspace::length(&path, m)?,
        el_residual: el,
        e_spread: ev.e_spread(),
        beta,
        path,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedClass {
    pub winding: Vec<i64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    /// Converged classes sorted by energy.
    pub geodesics: Vec<SolveReport>,
    pub dropped: Vec<DroppedClass>,
}

impl MultiplicityReport {
    /// Whether every pair of reported geodesics is separated node-wise by
    /// more than `tol`.
    pub fn distinct(&self, tol: f64) -> bool {
        let g = &self.geodesics;
        (0..g.len()).all(|i| (0..i).all(|j| g[i].path.max_node_distance(&g[j].path) > tol))
    }
}

/// One continuation per winding class, run in parallel.
pub fn solve_multiplicity(
    p: &[f64],
    q: &[f64],
    b: &Barrier,
    cfg: &SolverConfig,
    classes: &[Vec<i64>],
) -> Result<MultiplicityReport> {
    let results: Vec<(Vec<i64>, Result<SolveReport>)> = classes
        .par_iter()
        .map(|w| (w.clone(), solve(p, q, b, cfg, &PathSeed::winding(w.clone()))))
        .collect();
    let mut geodesics = Vec::new();
    let mut dropped = Vec::new();
    for (winding, res) in results {
        match res {
            Ok(r) if r.converged => geodesics.push(r),
            Ok(r) => dropped.push(DroppedClass {
                winding,
                reason: r.failure_reason.unwrap_or_else(|| "not_converged".into()),
            }),
            Err(e) => dropped.push(DroppedClass {
                winding,
                reason: e.to_string(),
            }),
        }
    }
    geodesics.sort_by(|a, b| a.f_value.total_cmp(&b.f_value));
    Ok(MultiplicityReport { geodesics, dropped })
}
