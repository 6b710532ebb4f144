//! The open domain D = {φ > 0} of a chart manifold, the normalized gradient
//! flow η̇ = −∇φ/‖∇φ‖² (which lowers φ at unit rate) and the projection onto
//! level sets of φ built from it.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeodomError, Result};
use crate::field::{fd_step, ScalarField, FD_STEP, FD_STEP_2};
use crate::linalg;
use crate::manifold::{ChartManifold, Point};

/// Below this Riemannian gradient norm the normalized flow is undefined.
pub const GRAD_FLOOR: f64 = 1e-8;
/// Default RK4 step count for one flow call.
pub const DEFAULT_FLOW_STEPS: usize = 512;

/// A strictly decreasing positive sequence of levels a₀ > a₁ > … (finite
/// prefix of a sequence tending to zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    levels: Vec<f64>,
}

impl LevelSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(GeodomError::InvalidArgument("empty level schedule".into()));
        }
        if levels.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(GeodomError::InvalidArgument("levels must be positive".into()));
        }
        if levels.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(GeodomError::InvalidArgument(
                "levels must be strictly decreasing".into(),
            ));
        }
        Ok(Self { levels })
    }

    /// a_m = a₀·2⁻ᵐ, m = 0..count.
    pub fn geometric(a0: f64, count: usize) -> Result<Self> {
        Self::new((0..count).map(|m| a0 * 0.5f64.powi(m as i32)).collect())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn first(&self) -> f64 {
        self.levels[0]
    }

    pub fn last(&self) -> f64 {
        *self.levels.last().unwrap()
    }
}

/// An axis-aligned sampling box in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(GeodomError::InvalidArgument(format!(
                "invalid box {lo:?} .. {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| rng.gen_range(*a..*b))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub time: f64,
}

/// The barrier φ together with the manifold it lives on.
#[derive(Clone)]
pub struct Barrier {
    manifold: ChartManifold,
    phi: Arc<dyn ScalarField>,
    schedule: LevelSchedule,
    lipschitz: Option<f64>,
    flow_steps: usize,
}

impl fmt::Debug for Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Barrier")
            .field("manifold", &self.manifold)
            .field("schedule", &self.schedule)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl Barrier {
    pub fn new(manifold: ChartManifold, phi: Arc<dyn ScalarField>) -> Self {
        Self {
            manifold,
            phi,
            schedule: LevelSchedule::geometric(0.5, 8).unwrap(),
            lipschitz: None,
            flow_steps: DEFAULT_FLOW_STEPS,
        }
    }

    pub fn with_schedule(mut self, schedule: LevelSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Declares |φ(x) − φ(y)| ≤ L·|x − y| in chart coordinates. Enables the
    /// segment clearance test of discrete paths, which keeps a polyline from
    /// stepping over a thin boundary between two nodes.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Self {
        self.lipschitz = Some(lipschitz);
        self
    }

    pub fn with_flow_steps(mut self, steps: usize) -> Self {
        self.flow_steps = steps.max(1);
        self
    }

    /// The same φ over another metric on the same chart.
    pub fn with_manifold(&self, manifold: ChartManifold) -> Self {
        Self {
            manifold,
            ..self.clone()
        }
    }

    pub fn manifold(&self) -> &ChartManifold {
        &self.manifold
    }

    pub fn field(&self) -> &Arc<dyn ScalarField> {
        &self.phi
    }

    pub fn schedule(&self) -> &LevelSchedule {
        &self.schedule
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    #[inline]
    pub fn phi(&self, x: &[f64]) -> f64 {
        self.phi.value(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.manifold.contains(x) && self.phi(x) > 0.0
    }

    /// Riemannian gradient components and their g-norm.
    pub fn gradient(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.manifold.dim();
        let mut g = vec![0.0; n * n];
        let mut dphi = vec![0.0; n];
        self.manifold.metric_into(x, &mut g);
        self.phi.gradient(x, &mut dphi);
        let grad = linalg::spd_solve(&g, n, &dphi)
            .ok_or_else(|| GeodomError::NotPositiveDefinite { point: x.to_vec() })?;
        let norm = linalg::dot(&grad, &dphi).max(0.0).sqrt();
        Ok((grad, norm))
    }

    /// −∇φ/‖∇φ‖².
    fn flow_field(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.manifold.contains(x) {
            return Err(GeodomError::ChartDomain { point: x.to_vec() });
        }
        let (grad, norm) = self.gradient(x)?;
        if !(norm >= GRAD_FLOOR) {
            return Err(GeodomError::DegenerateGradient {
                point: x.to_vec(),
                norm,
            });
        }
        let inv = 1.0 / (norm * norm);
        for (o, g) in out.iter_mut().zip(&grad) {
            *o = -g * inv;
        }
        Ok(())
    }

    fn integrate(&self, x: &[f64], s: f64, steps: usize, mut visit: impl FnMut(f64, &[f64])) -> Result<Point> {
        let phi0 = self.phi(x);
        if s >= phi0 {
            return Err(GeodomError::BoundaryReach { time: s, phi: phi0 });
        }
        let n = x.len();
        let steps = steps.max(1);
        let h = s / steps as f64;
        let mut y = x.to_vec();
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut tmp = vec![0.0; n];
        visit(0.0, &y);
        if s == 0.0 {
            return Ok(y);
        }
        for step in 0..steps {
            self.flow_field(&y, &mut k[0])?;
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k[0][i];
            }
            self.flow_field(&tmp, &mut k[1])?;
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k[1][i];
            }
            self.flow_field(&tmp, &mut k[2])?;
            for i in 0..n {
                tmp[i] = y[i] + h * k[2][i];
            }
            self.flow_field(&tmp, &mut k[3])?;
            for i in 0..n {
                y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            visit((step + 1) as f64 * h, &y);
        }
        Ok(y)
    }

    /// η(s, x) by `steps` RK4 steps. Negative s flows away from the boundary.
    pub fn flow(&self, x: &[f64], s: f64, steps: usize) -> Result<Point> {
        self.manifold.check_point(x)?;
        self.integrate(x, s, steps, |_, _| {})
    }

    /// The sampled trajectory s ↦ η(s, x).
    pub fn flow_states(&self, x: &[f64], s: f64, steps: usize) -> Result<Vec<(FlowState, Point)>> {
        self.manifold.check_point(x)?;
        let mut out = Vec::with_capacity(steps + 1);
        self.integrate(x, s, steps, |t, y| out.push((FlowState { time: t }, y.to_vec())))?;
        Ok(out)
    }

    /// Moves x along the flow onto φ⁻¹(a), for 0 < a ≤ φ(x). The RK4
    /// endpoint is polished by Newton steps along ∇φ so that |φ − a| sits at
    /// round-off level.
    pub fn project_to_level(&self, x: &[f64], a: f64) -> Result<Point> {
        self.manifold.check_point(x)?;
        let phi0 = self.phi(x);
        if !(a > 0.0) {
            return Err(GeodomError::InvalidArgument(format!("level {a} must be positive")));
        }
        if a > phi0 {
            return Err(GeodomError::WrongSide { level: a, phi: phi0 });
        }
        self.move_to_level(x, a)
    }

    /// Moves x to φ⁻¹(a) from either side (backwards in flow time when
    /// φ(x) < a).
    pub fn move_to_level(&self, x: &[f64], a: f64) -> Result<Point> {
        let phi0 = self.phi(x);
        let s = phi0 - a;
        if s.abs() <= 1e-14 * a.max(1.0) {
            return Ok(x.to_vec());
        }
        let steps = ((self.flow_steps as f64) * s.abs().max(1.0)).ceil() as usize;
        let mut y = self.integrate(x, s, steps, |_, _| {})?;
        for _ in 0..6 {
            let defect = self.phi(&y) - a;
            if defect.abs() <= 1e-14 * a.max(1.0) {
                break;
            }
            let (grad, norm) = self.gradient(&y)?;
            if !(norm >= GRAD_FLOOR) {
                return Err(GeodomError::DegenerateGradient {
                    point: y.clone(),
                    norm,
                });
            }
            let mut z = y.clone();
            for (zi, gi) in z.iter_mut().zip(&grad) {
                *zi -= defect * gi / (norm * norm);
            }
            if !self.manifold.contains(&z) {
                break;
            }
            y = z;
        }
        Ok(y)
    }
}

/// Sampled bounds on the first and second derivatives of x ↦ η(s, x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowBounds {
    /// Largest chart operator norm of ∂η/∂x.
    pub c1_chart: f64,
    /// Largest chart norm of ∂²η/∂x² over pairs of coordinate directions.
    pub c2_chart: f64,
    /// Largest operator norm of ∂η/∂x from (T_x, g) to (T_η, g).
    pub c1_metric: f64,
    /// Largest g-norm of ∂²η/∂x² over pairs of g-orthonormal directions.
    pub c2_metric: f64,
    pub samples: usize,
    pub failures: usize,
}

struct SampleBounds {
    c1_chart: f64,
    c2_chart: f64,
    c1_metric: f64,
    c2_metric: f64,
}

fn bounds_at(b: &Barrier, x: &[f64], s: f64, steps: usize) -> Result<SampleBounds> {
    let n = x.len();
    let m = b.manifold();
    let eta = |y: &[f64]| b.integrate(y, s, steps, |_, _| {});
    let y0 = eta(x)?;

    let h = fd_step(x, FD_STEP);
    let mut jac = DMatrix::zeros(n, n);
    let mut z = x.to_vec();
    for j in 0..n {
        z[j] = x[j] + h;
        let p = eta(&z)?;
        z[j] = x[j] - h;
        let q = eta(&z)?;
        z[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (p[i] - q[i]) / (2.0 * h);
        }
    }

    // second derivatives B[i][j][k] = ∂²ηᵢ/∂xⱼ∂xₖ
    let h2 = fd_step(x, FD_STEP_2);
    let mut second = vec![DVector::zeros(n); n * n];
    for j in 0..n {
        for k in 0..=j {
            let probe = |dj: f64, dk: f64| -> Result<Point> {
                let mut w = x.to_vec();
                w[j] += dj;
                w[k] += dk;
                eta(&w)
            };
            let d = if j == k {
                let p = probe(h2, 0.0)?;
                let q = probe(-h2, 0.0)?;
                DVector::from_fn(n, |i, _| (p[i] - 2.0 * y0[i] + q[i]) / (h2 * h2))
            } else {
                let pp = probe(h2, h2)?;
                let pm = probe(h2, -h2)?;
                let mp = probe(-h2, h2)?;
                let mm = probe(-h2, -h2)?;
                DVector::from_fn(n, |i, _| (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h2 * h2))
            };
            second[j * n + k] = d.clone();
            second[k * n + j] = d;
        }
    }

    let c1_chart = jac.clone().svd(false, false).singular_values.max();
    let c2_chart = second.iter().map(|v| v.norm()).fold(0.0, f64::max);

    let gy = m.metric(&y0)?;
    let frame = m.orthonormal_frame(x, None)?;
    let frame = DMatrix::from_fn(n, n, |i, j| frame[j][i]);
    let ly = gy
        .clone()
        .cholesky()
        .ok_or_else(|| GeodomError::NotPositiveDefinite { point: y0.clone() })?
        .l();
    let weighted = ly.transpose() * &jac * &frame;
    let c1_metric = weighted.svd(false, false).singular_values.max();
    let mut c2_metric: f64 = 0.0;
    for a in 0..n {
        for c in 0..=a {
            let mut v = DVector::zeros(n);
            for j in 0..n {
                for k in 0..n {
                    v += &second[j * n + k] * (frame[(j, a)] * frame[(k, c)]);
                }
            }
            c2_metric = c2_metric.max(v.dot(&(&gy * &v)).sqrt());
        }
    }
    Ok(SampleBounds {
        c1_chart,
        c2_chart,
        c1_metric,
        c2_metric,
    })
}

/// Samples (x, s) with x in `region`, φ(x) > a_floor and
/// 0 ≤ s ≤ min(s_max, φ(x) − a_floor), half of them at the upper end of
/// that range, and reports the largest derivative
/// norms of the flow seen. Deterministic for a given seed.
pub fn flow_derivative_bounds(
    b: &Barrier,
    region: &Region,
    s_max: f64,
    a_floor: f64,
    n_samples: usize,
    seed: u64,
) -> Result<FlowBounds> {
    if n_samples == 0 {
        return Err(GeodomError::InvalidArgument(
            "flow_derivative_bounds needs at least one sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_samples);
    let mut attempts = 0usize;
    while draws.len() < n_samples && attempts < 50 * n_samples {
        attempts += 1;
        let x = region.sample(&mut rng);
        let u: f64 = rng.gen();
        if !b.contains(&x) || b.phi(&x) <= a_floor {
            continue;
        }
        // every other sample flows all the way down to a_floor
        let u = if draws.len() % 2 == 1 { 1.0 } else { u };
        let s = u * s_max.min(b.phi(&x) - a_floor);
        draws.push((x, s));
    }
    let steps = b.flow_steps.min(64);
    let results: Vec<Option<SampleBounds>> = draws
        .par_iter()
        .map(|(x, s)| bounds_at(b, x, *s, steps).ok())
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count() + (n_samples - draws.len());
    if 2 * failures > n_samples {
        return Err(GeodomError::UnusableRegion {
            failures,
            samples: n_samples,
        });
    }
    let mut out = FlowBounds {
        c1_chart: 0.0,
        c2_chart: 0.0,
        c1_metric: 0.0,
        c2_metric: 0.0,
        samples: n_samples,
        failures,
    };
    for r in results.into_iter().flatten() {
        out.c1_chart = out.c1_chart.max(r.c1_chart);
        out.c2_chart = out.c2_chart.max(r.c2_chart);
        out.c1_metric = out.c1_metric.max(r.c1_metric);
        out.c2_metric = out.c2_metric.max(r.c2_metric);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{Euclidean, HalfPlaneY, PolarInverseR2, RadialR, SqrtXy};

    fn punctured() -> Barrier {
        Barrier::new(PolarInverseR2::manifold(), Arc::new(RadialR))
    }

    fn half_plane() -> Barrier {
        Barrier::new(Euclidean::manifold(2), Arc::new(HalfPlaneY))
    }

    fn quadrant() -> Barrier {
        Barrier::new(Euclidean::manifold(2), Arc::new(SqrtXy))
    }

    #[test]
    fn schedule_validation() {
        assert!(LevelSchedule::new(vec![0.5, 0.25, 0.3]).is_err());
        assert!(LevelSchedule::new(vec![0.5, -0.1]).is_err());
        let s = LevelSchedule::geometric(1.0, 4).unwrap();
        assert_eq!(s.levels(), &[1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn flow_examples() {
        let y = punctured().flow(&[3.0, 1.0], 1.0, 50).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12);

        let x = [0.4, 0.9];
        assert_eq!(quadrant().flow(&x, 0.0, 10).unwrap(), x.to_vec());

        let y = half_plane().flow(&[5.0, 2.0], 1.5, 10).unwrap();
        assert!((y[0] - 5.0).abs() < 1e-14 && (y[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn flow_errors() {
        assert!(matches!(
            half_plane().flow(&[0.0, 1.0], 1.0, 10),
            Err(GeodomError::BoundaryReach { .. })
        ));
        let flat = Barrier::new(Euclidean::manifold(2), Arc::new(crate::builtins::Unbounded));
        assert!(matches!(
            flat.flow(&[0.0, 1.0], 0.5, 10),
            Err(GeodomError::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn flow_semigroup() {
        let b = quadrant();
        let x = [1.3, 2.2];
        let one = b.flow(&x, 0.3, 200).unwrap();
        let two = b.flow(&one, 0.4, 200).unwrap();
        let direct = b.flow(&x, 0.7, 400).unwrap();
        assert!(linalg::norm(&[two[0] - direct[0], two[1] - direct[1]]) < 1e-7);
    }

    #[test]
    fn projection_examples() {
        let y = punctured().project_to_level(&[3.0, 1.0], 0.5).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12);

        let b = quadrant();
        let x = [4.0, 1.0];
        let y = b.project_to_level(&x, 1.0).unwrap();
        assert!((b.phi(&y) - 1.0).abs() < 1e-8);
        // against a ten-times finer RK4 reference
        let fine = b.flow(&x, 1.0, 10 * DEFAULT_FLOW_STEPS).unwrap();
        assert!(linalg::norm(&[y[0] - fine[0], y[1] - fine[1]]) < 1e-8);

        let on = [2.0, 0.5];
        let same = b.project_to_level(&on, b.phi(&on)).unwrap();
        assert!(linalg::norm(&[same[0] - on[0], same[1] - on[1]]) < 1e-12);

        assert!(matches!(
            b.project_to_level(&on, 1.5),
            Err(GeodomError::WrongSide { .. })
        ));
    }

    #[test]
    fn projection_is_idempotent() {
        let b = quadrant();
        let y = b.project_to_level(&[3.0, 2.0], 0.7).unwrap();
        let z = b.project_to_level(&y, 0.7).unwrap();
        assert!(linalg::norm(&[y[0] - z[0], y[1] - z[1]]) < 1e-10);
    }

    #[test]
    fn reverse_flow_lifts_points() {
        let b = quadrant();
        let y = b.move_to_level(&[1.0, 0.01], 0.5).unwrap();
        assert!((b.phi(&y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flow_bounds_examples() {
        let region = Region::new(vec![0.05, 0.0], vec![1.0, 6.0]).unwrap();
        let fb = flow_derivative_bounds(&punctured(), &region, 1.0, 0.01, 40, 3).unwrap();
        assert!((fb.c1_chart - 1.0).abs() < 1e-6, "{fb:?}");
        assert!(fb.c2_chart < 1e-6, "{fb:?}");
        assert!(fb.c1_metric > 2.0, "{fb:?}");

        let region = Region::new(vec![-2.0, 0.1], vec![2.0, 2.0]).unwrap();
        let fb = flow_derivative_bounds(&half_plane(), &region, 1.0, 0.01, 40, 3).unwrap();
        assert!((fb.c1_chart - 1.0).abs() < 1e-6 && fb.c2_chart < 1e-6);
        assert!((fb.c1_metric - 1.0).abs() < 1e-6);

        assert!(flow_derivative_bounds(&half_plane(), &region, 1.0, 0.01, 0, 3).is_err());
    }

    #[test]
    fn flow_bounds_are_deterministic() {
        let region = Region::new(vec![0.1, 0.1], vec![2.0, 2.0]).unwrap();
        let a = flow_derivative_bounds(&quadrant(), &region, 0.5, 0.05, 16, 11).unwrap();
        let b = flow_derivative_bounds(&quadrant(), &region, 0.5, 0.05, 16, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unusable_region_is_reported() {
        let flat = Barrier::new(Euclidean::manifold(2), Arc::new(crate::builtins::Unbounded));
        let region = Region::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            flow_derivative_bounds(&flat, &region, 0.5, 0.01, 8, 1),
            Err(GeodomError::UnusableRegion { .. })
        ));
    }
}
