//! Sampling checks of the boundary-convexity hypotheses: gradient bounds
//! a ≤ ‖∇φ‖ ≤ b on the level sets φ⁻¹(aₘ), the constant M in
//! H_φ(x)[v, v] ≤ M φ(x) ⟨v, v⟩ (tangent and all directions), flow derivative
//! bounds, boundary convexity H_φ ≤ 0 on level tangents and Gordon's
//! convex-exhaustion test.
//!
//! Every verdict is empirical: suprema over directions are exact per sample,
//! but suprema over points and the limit aₘ → 0 are only sampled.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{flow_derivative_bounds, Barrier, FlowBounds, Region, GRAD_FLOOR};
use crate::error::{GeodomError, Result};
use crate::field::{ScalarField, Warp, Warped};
use crate::manifold::Point;

/// Tolerance of the level-set projection.
pub const LEVEL_TOL: f64 = 1e-9;
/// A quantity is treated as growing when its value two levels later exceeds
/// this multiple of the earlier one.
pub const GROWTH_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSamples {
    pub level: f64,
    pub points: Vec<Point>,
    pub attempts: usize,
    pub failures: usize,
    /// Fewer than half of the requested points were obtained.
    pub sparse: bool,
}

/// Draws box points with φ > a and projects them onto φ⁻¹(a) along the flow.
/// Deterministic for a given seed; projections run in parallel.
pub fn level_sample(b: &Barrier, a: f64, n: usize, seed: u64, region: &Region) -> Result<LevelSamples> {
    if !(a > 0.0) {
        return Err(GeodomError::InvalidArgument(format!("level {a} must be positive")));
    }
    if region.dim() != b.manifold().dim() {
        return Err(GeodomError::Dimension {
            expected: b.manifold().dim(),
            got: region.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::with_capacity(n);
    let mut attempts = 0;
    while candidates.len() < n && attempts < 50 * n.max(1) {
        attempts += 1;
        let x = region.sample(&mut rng);
        if b.contains(&x) && b.phi(&x) > a {
            candidates.push(x);
        }
    }
    let projected: Vec<Option<Point>> = candidates
        .par_iter()
        .map(|x| {
            b.project_to_level(x, a)
                .ok()
                .filter(|y| b.manifold().contains(y) && (b.phi(y) - a).abs() < LEVEL_TOL)
        })
        .collect();
    let points: Vec<Point> = projected.into_iter().flatten().collect();
    Ok(LevelSamples {
        level: a,
        failures: n - points.len(),
        sparse: 2 * points.len() < n,
        attempts,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directions {
    /// v ∈ T_x φ⁻¹(φ(x)).
    Tangent,
    /// v ∈ T_x M.
    All,
}

/// H_φ(x)[v, v] / (⟨v, v⟩ φ(x)).
pub fn hessian_ratio(b: &Barrier, x: &[f64], v: &[f64]) -> Result<f64> {
    let m = b.manifold();
    let h = m.cov_hessian(b.field().as_ref(), x)?;
    let g = m.metric(x)?;
    let v = DVector::from_column_slice(v);
    let vv = v.dot(&(&g * &v));
    if !(vv > 0.0) {
        return Err(GeodomError::InvalidArgument("zero direction".into()));
    }
    Ok(v.dot(&(&h * &v)) / (vv * b.phi(x)))
}

fn frame_matrix(frame: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, frame.len(), |i, j| frame[j][i])
}

/// sup over unit directions of H_φ[v, v]/φ at one point: the top eigenvalue
/// of H restricted to a g-orthonormal frame, cross-checked against the frame
/// vectors themselves and `extra` random directions.
fn point_m<R: Rng>(b: &Barrier, x: &[f64], mode: Directions, extra: usize, rng: &mut R) -> Result<f64> {
    let m = b.manifold();
    let n = m.dim();
    let grad = m.riem_grad(b.field().as_ref(), x)?;
    let norm = m.norm(x, &grad.comps)?;
    if !(norm >= GRAD_FLOOR) {
        return Err(GeodomError::DegenerateGradient {
            point: x.to_vec(),
            norm,
        });
    }
    let frame = match mode {
        Directions::Tangent => m.orthonormal_frame(x, Some(&grad.comps))?,
        Directions::All => m.orthonormal_frame(x, None)?,
    };
    if frame.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let h = m.cov_hessian(b.field().as_ref(), x)?;
    let e = frame_matrix(&frame, n);
    let restricted = e.transpose() * &h * &e;
    let phi = b.phi(x);
    let mut best = SymmetricEigen::new(restricted.clone()).eigenvalues.max() / phi;
    for j in 0..frame.len() {
        best = best.max(restricted[(j, j)] / phi);
    }
    for _ in 0..extra {
        let c = DVector::from_fn(frame.len(), |_, _| rng.gen_range(-1.0..1.0));
        let cc = c.dot(&c);
        if cc > 1e-12 {
            best = best.max(c.dot(&(&restricted * &c)) / (cc * phi));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MEstimate {
    pub value: f64,
    pub failures: usize,
}

/// Largest H_φ[v, v]/(⟨v, v⟩φ) over the sample points and the requested
/// direction class. Points with a degenerate gradient are skipped and
/// counted.
pub fn estimate_m(b: &Barrier, points: &[Point], mode: Directions, extra: usize, seed: u64) -> MEstimate {
    let values: Vec<Option<f64>> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            point_m(b, x, mode, extra, &mut rng).ok()
        })
        .collect();
    let failures = values.iter().filter(|v| v.is_none()).count();
    let value = values.into_iter().flatten().fold(f64::NEG_INFINITY, f64::max);
    MEstimate { value, failures }
}

/// max |H_{ϕ∘φ}[v, v] − ϕ'(φ) H_φ[v, v]| / (1 + |H_φ[v, v]|) over level
/// tangents at the given points.
pub fn rescaling_check(b: &Barrier, warp: Arc<dyn Warp>, points: &[Point]) -> Result<f64> {
    let m = b.manifold();
    let warped = Warped {
        inner: b.field().clone(),
        warp: warp.clone(),
    };
    let mut worst: f64 = 0.0;
    for x in points {
        let grad = m.riem_grad(b.field().as_ref(), x)?;
        let frame = m.orthonormal_frame(x, Some(&grad.comps))?;
        let h = m.cov_hessian(b.field().as_ref(), x)?;
        let hw = m.cov_hessian(&warped, x)?;
        let d = warp.derivative(b.phi(x));
        if !(d > 0.0) {
            return Err(GeodomError::InvalidArgument(format!(
                "warp is not increasing at {}",
                b.phi(x)
            )));
        }
        for v in &frame {
            let v = DVector::from_column_slice(v);
            let base = v.dot(&(&h * &v));
            let lhs = v.dot(&(&hw * &v));
            worst = worst.max((lhs - d * base).abs() / (1.0 + base.abs()));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Lower gradient bound a ≤ ‖∇φ‖.
    IiLower,
    /// Upper gradient bound ‖∇φ‖ ≤ b.
    IiUpper,
    Ii,
    /// Flow derivative bounds.
    Iii,
    /// M bounded on level tangents.
    Iv,
    /// Boundary convexity H_φ ≤ 0 on level tangents.
    T0,
    /// (ii), (iii) and (iv) together.
    T1,
    /// (ii) and M bounded over all directions.
    T2,
    Gordon,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 9] = [
        Hypothesis::IiLower,
        Hypothesis::IiUpper,
        Hypothesis::Ii,
        Hypothesis::Iii,
        Hypothesis::Iv,
        Hypothesis::T0,
        Hypothesis::T1,
        Hypothesis::T2,
        Hypothesis::Gordon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Hypothesis::IiLower => "ii_lower",
            Hypothesis::IiUpper => "ii_upper",
            Hypothesis::Ii => "ii",
            Hypothesis::Iii => "iii",
            Hypothesis::Iv => "iv",
            Hypothesis::T0 => "t0",
            Hypothesis::T1 => "t1",
            Hypothesis::T2 => "t2",
            Hypothesis::Gordon => "gordon",
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Indeterminate,
}

impl Status {
    fn and(self, other: Status) -> Status {
        use Status::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Indeterminate, _) | (_, Indeterminate) => Indeterminate,
            _ => Pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub reason: String,
}

impl Verdict {
    fn new(status: Status, reason: impl Into<String>) -> Self {
        Self {
            status,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisConfig {
    /// Levels to sample; the barrier's schedule when empty.
    pub levels: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Sampling box (the local neighbourhood of the hypotheses).
    pub region: Option<Region>,
    /// Random directions per sample on top of the exact frame sup.
    pub directions: usize,
    /// Sign tolerance for boundary convexity and Gordon's Hessian test.
    pub tol: f64,
    pub flow_samples: usize,
    pub checks: Vec<Hypothesis>,
    /// Run Gordon's test with h = 1/φ.
    pub gordon: bool,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            samples: 64,
            seed: 0,
            region: None,
            directions: 8,
            tol: 1e-9,
            flow_samples: 32,
            checks: Hypothesis::ALL.to_vec(),
            gordon: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub a: f64,
    pub min_grad: f64,
    pub max_grad: f64,
    pub m_tangent: f64,
    pub m_all: f64,
    pub n_samples: usize,
    pub n_failures: usize,
    pub sparse: bool,
    pub flow: Option<FlowBounds>,
    /// Smallest eigenvalue of the covariant Hessian of h = 1/φ.
    pub gordon_min_eig: Option<f64>,
    pub gordon_min_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub per_level: Vec<LevelRecord>,
    pub verdicts: BTreeMap<String, Verdict>,
    pub checks: Vec<Hypothesis>,
    pub seed: u64,
}

impl HypothesisReport {
    pub fn verdict(&self, h: Hypothesis) -> &Verdict {
        &self.verdicts[h.name()]
    }

    /// 0 when every requested check passes, 4 when any fails, 5 otherwise.
    pub fn exit_code(&self) -> i32 {
        let statuses: Vec<Status> = self.checks.iter().map(|h| self.verdict(*h).status).collect();
        if statuses.contains(&Status::Fail) {
            4
        } else if statuses.contains(&Status::Indeterminate) {
            5
        } else {
            0
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>12} {:>12} {:>12} {:>13} {:>13} {:>10} {:>10} {:>7} {:>4}",
            "a", "min|grad|", "max|grad|", "M_tangent", "M_all", "C1_chart", "C1_metric", "samples", "fail"
        );
        for r in &self.per_level {
            let (c1, c1m) = r.flow.map_or((f64::NAN, f64::NAN), |f| (f.c1_chart, f.c1_metric));
            let _ = writeln!(
                out,
                "{:>12.5e} {:>12.5e} {:>12.5e} {:>13.5e} {:>13.5e} {:>10.4} {:>10.4} {:>7} {:>4}",
                r.a, r.min_grad, r.max_grad, r.m_tangent, r.m_all, c1, c1m, r.n_samples, r.n_failures
            );
        }
        out.push('\n');
        for (name, v) in &self.verdicts {
            let req = if self.checks.iter().any(|h| h.name() == name) { "*" } else { " " };
            let _ = writeln!(out, "{req}{name:<9} {:<13} {}", format!("{:?}", v.status).to_lowercase(), v.reason);
        }
        out
    }
}

fn level_values(levels: &[LevelRecord], f: impl Fn(&LevelRecord) -> f64) -> Vec<f64> {
    levels.iter().map(f).collect()
}

/// Whether a sequence indexed by decreasing level stays bounded above:
/// the last value is within [`GROWTH_FACTOR`] of the value two levels
/// earlier (or below `floor`).
pub fn bounded_above(values: &[f64], floor: f64) -> Option<bool> {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.len() < 3 {
        return None;
    }
    let last = v[v.len() - 1];
    let earlier = v[v.len() - 3];
    Some(last <= floor || last <= GROWTH_FACTOR * earlier.max(0.0))
}

/// Whether a positive sequence stays bounded away from zero.
pub fn bounded_below(values: &[f64], floor: f64) -> Option<bool> {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.len() < 3 {
        return None;
    }
    let last = v[v.len() - 1];
    let earlier = v[v.len() - 3];
    Some(last > floor && last >= earlier / GROWTH_FACTOR)
}

fn growth_verdict(ok: Option<bool>, what: &str, values: &[f64], trend: &str) -> Verdict {
    let tail: Vec<String> = values.iter().rev().take(3).rev().map(|v| format!("{v:.4e}")).collect();
    match ok {
        None => Verdict::new(Status::Indeterminate, format!("{what}: fewer than 3 usable levels")),
        Some(true) => Verdict::new(Status::Pass, format!("{what} stable over last levels [{}]", tail.join(", "))),
        Some(false) => Verdict::new(Status::Fail, format!("{what} {trend} as a -> 0 [{}]", tail.join(", "))),
    }
}

/// Absolute floor below which sampled flow derivative bounds are treated as
/// zero (finite-difference noise).
const FLOW_FLOOR: f64 = 1e-4;

/// Absolute floor below which sampled M values are treated as zero.
const M_FLOOR: f64 = 1e-6;

/// Samples every level of the schedule and decides each hypothesis.
pub fn check_hypotheses(b: &Barrier, cfg: &HypothesisConfig) -> Result<HypothesisReport> {
    let levels = if cfg.levels.is_empty() {
        b.schedule().levels().to_vec()
    } else {
        crate::domain::LevelSchedule::new(cfg.levels.clone())?.levels().to_vec()
    };
    let region = cfg
        .region
        .clone()
        .ok_or_else(|| GeodomError::InvalidArgument("hypothesis checks need a sampling box".into()))?;
    let m = b.manifold();
    let inverse = crate::builtins::InverseBarrier(b.field().clone());
    let s_max = levels[0];

    let mut per_level = Vec::with_capacity(levels.len());
    for (idx, &a) in levels.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(1000 * idx as u64);
        let sample = level_sample(b, a, cfg.samples, seed, &region)?;
        let norms: Vec<Option<f64>> = sample
            .points
            .par_iter()
            .map(|x| {
                let g = m.riem_grad(b.field().as_ref(), x).ok()?;
                m.norm(x, &g.comps).ok()
            })
            .collect();
        let norms: Vec<f64> = norms.into_iter().flatten().collect();
        let tangent = estimate_m(b, &sample.points, Directions::Tangent, cfg.directions, seed ^ 1);
        let all = estimate_m(b, &sample.points, Directions::All, cfg.directions, seed ^ 2);
        let flow = if cfg.flow_samples > 0 {
            flow_derivative_bounds(b, &region, s_max, a, cfg.flow_samples, seed ^ 3).ok()
        } else {
            None
        };
        let (gordon_min_eig, gordon_min_h) = if cfg.gordon {
            let eigs: Vec<f64> = sample
                .points
                .par_iter()
                .filter_map(|x| m.cov_hessian(&inverse, x).ok())
                .map(|h| SymmetricEigen::new(h).eigenvalues.min())
                .collect();
            let hs = sample.points.iter().map(|x| inverse.value(x));
            (
                Some(eigs.into_iter().fold(f64::INFINITY, f64::min)),
                Some(hs.fold(f64::INFINITY, f64::min)),
            )
        } else {
            (None, None)
        };
        let empty = sample.points.is_empty();
        per_level.push(LevelRecord {
            a,
            min_grad: if empty { f64::NAN } else { norms.iter().copied().fold(f64::INFINITY, f64::min) },
            max_grad: if empty { f64::NAN } else { norms.iter().copied().fold(0.0, f64::max) },
            m_tangent: if empty { f64::NAN } else { tangent.value },
            m_all: if empty { f64::NAN } else { all.value },
            n_samples: sample.points.len(),
            n_failures: sample.failures + tangent.failures,
            sparse: sample.sparse,
            flow,
            gordon_min_eig,
            gordon_min_h,
        });
    }

    let verdicts = decide(&per_level, cfg);
    Ok(HypothesisReport {
        per_level,
        verdicts,
        checks: cfg.checks.clone(),
        seed: cfg.seed,
    })
}

fn decide(levels: &[LevelRecord], cfg: &HypothesisConfig) -> BTreeMap<String, Verdict> {
    let mut out = BTreeMap::new();
    let min_grad = level_values(levels, |r| r.min_grad);
    let max_grad = level_values(levels, |r| r.max_grad);
    let m_tan = level_values(levels, |r| r.m_tangent);
    let m_all = level_values(levels, |r| r.m_all);

    let lower = growth_verdict(bounded_below(&min_grad, GRAD_FLOOR), "min |grad phi|", &min_grad, "decays");
    let upper = growth_verdict(bounded_above(&max_grad, 0.0), "max |grad phi|", &max_grad, "grows");
    let ii = Verdict::new(
        lower.status.and(upper.status),
        format!("lower: {:?}; upper: {:?}", lower.status, upper.status).to_lowercase(),
    );

    let iii = {
        let flows: Vec<Option<FlowBounds>> = levels.iter().map(|r| r.flow).collect();
        if flows.iter().filter(|f| f.is_some()).count() < 3 {
            Verdict::new(Status::Indeterminate, "flow bounds unavailable on fewer than 3 levels")
        } else {
            let pick = |f: fn(&FlowBounds) -> f64| -> Vec<f64> {
                flows.iter().map(|b| b.as_ref().map_or(f64::NAN, f)).collect()
            };
            let chart = bounded_above(&pick(|f| f.c1_chart), FLOW_FLOOR).unwrap_or(false)
                && bounded_above(&pick(|f| f.c2_chart), FLOW_FLOOR).unwrap_or(false);
            let metric = bounded_above(&pick(|f| f.c1_metric), FLOW_FLOOR).unwrap_or(false)
                && bounded_above(&pick(|f| f.c2_metric), FLOW_FLOOR).unwrap_or(false);
            let c1m = pick(|f| f.c1_metric);
            match (chart, metric) {
                (true, true) => Verdict::new(Status::Pass, "flow derivatives bounded in chart and metric norms"),
                (false, false) => Verdict::new(Status::Fail, "flow derivatives grow as a -> 0"),
                (true, false) => Verdict::new(
                    Status::Indeterminate,
                    format!(
                        "flow derivatives bounded in chart norm but grow in the metric-weighted norm (C1_metric last {:.4e})",
                        c1m.last().copied().unwrap_or(f64::NAN)
                    ),
                ),
                (false, true) => Verdict::new(
                    Status::Indeterminate,
                    "flow derivatives bounded in metric norm but grow in chart norm",
                ),
            }
        }
    };

    let iv = growth_verdict(bounded_above(&m_tan, M_FLOOR.max(cfg.tol)), "M on level tangents", &m_tan, "grows");
    let all_dirs = growth_verdict(bounded_above(&m_all, M_FLOOR.max(cfg.tol)), "M over all directions", &m_all, "grows");

    let t0 = {
        let worst = m_tan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let degenerate = min_grad.iter().any(|g| !(*g > GRAD_FLOOR));
        if levels.iter().all(|r| r.n_samples == 0) {
            Verdict::new(Status::Indeterminate, "no level samples")
        } else if degenerate {
            Verdict::new(Status::Fail, "gradient degenerates on a level")
        } else if worst <= cfg.tol {
            Verdict::new(Status::Pass, format!("max M_tangent {worst:.4e} <= {:e}", cfg.tol))
        } else {
            Verdict::new(Status::Fail, format!("M_tangent reaches {worst:.4e} > {:e}", cfg.tol))
        }
    };

    let t1_status = ii.status.and(iii.status).and(iv.status);
    let t1 = Verdict::new(
        t1_status,
        format!("ii: {:?}; iii: {}; iv: {:?}", ii.status, iii.reason, iv.status),
    );
    let t2 = Verdict::new(
        ii.status.and(all_dirs.status),
        format!("ii: {:?}; {}", ii.status, all_dirs.reason),
    );

    let gordon = if !cfg.gordon {
        Verdict::new(Status::Indeterminate, "no convex exhaustion function supplied")
    } else {
        let eig = levels
            .iter()
            .filter_map(|r| r.gordon_min_eig)
            .fold(f64::INFINITY, f64::min);
        let hs: Vec<f64> = levels.iter().filter_map(|r| r.gordon_min_h).collect();
        let proper = hs.windows(2).all(|w| w[1] > w[0]);
        if !(eig >= -cfg.tol) {
            Verdict::new(Status::Fail, format!("Hessian of 1/phi has eigenvalue {eig:.4e}"))
        } else if !proper {
            Verdict::new(Status::Fail, "1/phi does not grow towards the boundary")
        } else {
            Verdict::new(
                Status::Pass,
                "1/phi convex at samples and growing towards the boundary (properness sampled only)",
            )
        }
    };

    for (h, v) in [
        (Hypothesis::IiLower, lower),
        (Hypothesis::IiUpper, upper),
        (Hypothesis::Ii, ii),
        (Hypothesis::Iii, iii),
        (Hypothesis::Iv, iv),
        (Hypothesis::T0, t0),
        (Hypothesis::T1, t1),
        (Hypothesis::T2, t2),
        (Hypothesis::Gordon, gordon),
    ] {
        out.insert(h.name().to_string(), v);
    }
    out
}
