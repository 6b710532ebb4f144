//! Builtin metrics, barrier functions and potentials used by the gallery.
//! All of them supply analytic derivatives.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{GeodomError, Result};
use crate::field::{MetricField, ScalarField};
use crate::manifold::ChartManifold;

// ---------------------------------------------------------------- metrics

/// The flat metric δᵢⱼ on Rⁿ.
#[derive(Debug, Clone, Copy)]
pub struct Euclidean(pub usize);

impl Euclidean {
    pub fn manifold(n: usize) -> ChartManifold {
        ChartManifold::new(Arc::new(Euclidean(n)))
    }
}

impl MetricField for Euclidean {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _x: &[f64], g: &mut [f64]) {
        let n = self.0;
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            g[i * n + i] = 1.0;
        }
    }
    fn partials(&self, _x: &[f64], dg: &mut [f64]) {
        dg.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// dr² + r⁻² dθ² on the chart (r, θ), r > 0, θ periodic.
#[derive(Debug, Clone, Copy)]
pub struct PolarInverseR2;

impl PolarInverseR2 {
    pub fn manifold() -> ChartManifold {
        ChartManifold::new(Arc::new(PolarInverseR2))
            .with_periodic_axis(1, 2.0 * PI)
            .with_chart_domain(Arc::new(|x: &[f64]| x[0] > 0.0))
    }
}

impl MetricField for PolarInverseR2 {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], g: &mut [f64]) {
        g.copy_from_slice(&[1.0, 0.0, 0.0, 1.0 / (x[0] * x[0])]);
    }
    fn partials(&self, x: &[f64], dg: &mut [f64]) {
        dg.iter_mut().for_each(|v| *v = 0.0);
        dg[3] = -2.0 / x[0].powi(3);
    }
}

/// The unit-radius cylinder in the chart (θ, z) with θ periodic: flat.
#[derive(Debug, Clone, Copy)]
pub struct FlatCylinder;

impl FlatCylinder {
    pub fn manifold() -> ChartManifold {
        ChartManifold::new(Arc::new(Euclidean(2))).with_periodic_axis(0, 2.0 * PI)
    }
}

/// (E − V(x))·g(x) on top of a base chart, restricted to {V < E}.
pub struct ConformalMetric {
    pub base: ChartManifold,
    pub potential: Arc<dyn ScalarField>,
    pub energy: f64,
}

impl ConformalMetric {
    pub fn manifold(base: ChartManifold, potential: Arc<dyn ScalarField>, energy: f64) -> ChartManifold {
        let periodic = base.periodic_axes().to_vec();
        let base_domain = base.chart_domain().cloned();
        let v = potential.clone();
        let mut m = ChartManifold::new(Arc::new(ConformalMetric {
            base,
            potential,
            energy,
        }))
        .with_chart_domain(Arc::new(move |x: &[f64]| {
            base_domain.as_ref().is_none_or(|p| p(x)) && v.value(x) < energy
        }));
        for ax in periodic {
            m = m.with_periodic_axis(ax.axis, ax.period);
        }
        m
    }

    pub fn factor(&self, x: &[f64]) -> f64 {
        self.energy - self.potential.value(x)
    }
}

impl MetricField for ConformalMetric {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, x: &[f64], g: &mut [f64]) {
        self.base.metric_into(x, g);
        let c = self.factor(x);
        g.iter_mut().for_each(|v| *v *= c);
    }
    fn partials(&self, x: &[f64], dg: &mut [f64]) {
        let n = self.dim();
        let mut g = vec![0.0; n * n];
        let mut dv = vec![0.0; n];
        self.base.metric_into(x, &mut g);
        self.base.metric_partials_into(x, dg);
        self.potential.gradient(x, &mut dv);
        let c = self.factor(x);
        for k in 0..n {
            for ij in 0..n * n {
                dg[k * n * n + ij] = c * dg[k * n * n + ij] - dv[k] * g[ij];
            }
        }
    }
}

/// exp(δ·φ²)·Id on the flat cylinder, φ the capped helix distance. Raises
/// the level-set Hessian of φ by ≈ δ·⟨v,v⟩·φ near the helix.
pub struct HelixConformal {
    pub helix: HelixDistance,
    pub delta: f64,
}

impl HelixConformal {
    pub fn manifold(helix: HelixDistance, delta: f64) -> ChartManifold {
        ChartManifold::new(Arc::new(HelixConformal { helix, delta })).with_periodic_axis(0, 2.0 * PI)
    }
}

impl MetricField for HelixConformal {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], g: &mut [f64]) {
        let p = self.helix.value(x);
        let c = (self.delta * p * p).exp();
        g.copy_from_slice(&[c, 0.0, 0.0, c]);
    }
    fn partials(&self, x: &[f64], dg: &mut [f64]) {
        let p = self.helix.value(x);
        let c = (self.delta * p * p).exp();
        let mut dp = [0.0; 2];
        self.helix.gradient(x, &mut dp);
        for k in 0..2 {
            let d = 2.0 * self.delta * p * dp[k] * c;
            dg[k * 4..k * 4 + 4].copy_from_slice(&[d, 0.0, 0.0, d]);
        }
    }
}

// --------------------------------------------------------------- barriers

/// φ = √(xy) on the open first quadrant.
#[derive(Debug, Clone, Copy)]
pub struct SqrtXy;

impl ScalarField for SqrtXy {
    fn value(&self, x: &[f64]) -> f64 {
        let p = x[0] * x[1];
        if p > 0.0 && x[0] > 0.0 {
            p.sqrt()
        } else {
            0.0
        }
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = (x[0] * x[1]).sqrt();
        out[0] = 0.5 * x[1] / s;
        out[1] = 0.5 * x[0] / s;
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let s = (x[0] * x[1]).sqrt();
        let s3 = s * s * s;
        out[0] = -0.25 * x[1] * x[1] / s3;
        out[1] = 0.25 / s;
        out[2] = 0.25 / s;
        out[3] = -0.25 * x[0] * x[0] / s3;
    }
}

/// φ̂ = xy on the open first quadrant.
#[derive(Debug, Clone, Copy)]
pub struct Xy;

impl ScalarField for Xy {
    fn value(&self, x: &[f64]) -> f64 {
        if x[0] > 0.0 && x[1] > 0.0 {
            x[0] * x[1]
        } else {
            0.0
        }
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = x[0];
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 1.0, 1.0, 0.0]);
    }
}

/// φ = first chart coordinate (the radius r of the polar chart).
#[derive(Debug, Clone, Copy)]
pub struct RadialR;

impl ScalarField for RadialR {
    fn value(&self, x: &[f64]) -> f64 {
        x[0]
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = 1.0;
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// φ = y (second coordinate).
#[derive(Debug, Clone, Copy)]
pub struct HalfPlaneY;

impl ScalarField for HalfPlaneY {
    fn value(&self, x: &[f64]) -> f64 {
        x[1]
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[1] = 1.0;
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// φ = 1 − ‖x‖².
#[derive(Debug, Clone, Copy)]
pub struct UnitDisk;

impl ScalarField for UnitDisk {
    fn value(&self, x: &[f64]) -> f64 {
        1.0 - x.iter().map(|v| v * v).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -2.0 * v;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            out[i * n + i] = -2.0;
        }
    }
}

/// φ = y + A·sin x: a half-plane with a wavy, partly concave edge.
#[derive(Debug, Clone, Copy)]
pub struct WavyHalfPlane {
    pub amplitude: f64,
}

impl ScalarField for WavyHalfPlane {
    fn value(&self, x: &[f64]) -> f64 {
        x[1] + self.amplitude * x[0].sin()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.amplitude * x[0].cos();
        out[1] = 1.0;
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[-self.amplitude * x[0].sin(), 0.0, 0.0, 0.0]);
    }
}

/// φ ≡ 1: no boundary at all.
#[derive(Debug, Clone, Copy)]
pub struct Unbounded;

impl ScalarField for Unbounded {
    fn value(&self, _x: &[f64]) -> f64 {
        1.0
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Distance to the helix z = P·θ/2π on the flat cylinder chart (θ, z),
/// minimised over periodic representatives and capped smoothly:
/// φ = d for d ≤ w/2, φ constant (= 3w/4) for d ≥ w, C² in between.
#[derive(Debug, Clone, Copy)]
pub struct HelixDistance {
    pub pitch: f64,
    pub width: f64,
}

impl HelixDistance {
    pub fn new(pitch: f64, width: f64) -> Result<Self> {
        if !(pitch > 0.0 && width > 0.0) {
            return Err(GeodomError::InvalidArgument(
                "helix pitch and width must be positive".into(),
            ));
        }
        let h = HelixDistance { pitch, width };
        if width >= h.half_spacing() {
            return Err(GeodomError::InvalidArgument(format!(
                "helix width {width} must be below half the strand spacing {}",
                h.half_spacing()
            )));
        }
        Ok(h)
    }

    /// Rise per radian.
    fn slope(&self) -> f64 {
        self.pitch / (2.0 * PI)
    }

    fn normal_scale(&self) -> f64 {
        1.0 / (1.0 + self.slope() * self.slope()).sqrt()
    }

    /// Half of the perpendicular distance between consecutive strands.
    pub fn half_spacing(&self) -> f64 {
        0.5 * self.pitch * self.normal_scale()
    }

    /// Vertical offset from the nearest strand, in (−P/2, P/2].
    pub fn offset(&self, x: &[f64]) -> f64 {
        let u = x[1] - self.slope() * x[0];
        u - self.pitch * (u / self.pitch).round()
    }

    /// Index k of the strand band containing x (strand k is z = cθ + kP).
    pub fn band(&self, x: &[f64]) -> f64 {
        ((x[1] - self.slope() * x[0]) / self.pitch).floor()
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.offset(x).abs() * self.normal_scale()
    }

    /// Value and first two derivatives of the cap ψ(d).
    fn cap(&self, d: f64) -> (f64, f64, f64) {
        let d0 = 0.5 * self.width;
        let len = self.width - d0;
        if d <= d0 {
            (d, 1.0, 0.0)
        } else if d >= self.width {
            (d0 + 0.5 * len, 0.0, 0.0)
        } else {
            let u = (self.width - d) / len;
            let val = d0 + len * (0.5 - u.powi(3) + 0.5 * u.powi(4));
            let d1 = 3.0 * u * u - 2.0 * u.powi(3);
            let d2 = -(6.0 * u - 6.0 * u * u) / len;
            (val, d1, d2)
        }
    }

    fn distance_gradient(&self, x: &[f64]) -> [f64; 2] {
        let s = self.offset(x).signum() * self.normal_scale();
        [-self.slope() * s, s]
    }

    pub fn plateau(&self) -> f64 {
        0.75 * self.width
    }
}

impl ScalarField for HelixDistance {
    fn value(&self, x: &[f64]) -> f64 {
        self.cap(self.distance(x)).0
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (_, d1, _) = self.cap(self.distance(x));
        let n = self.distance_gradient(x);
        out[0] = d1 * n[0];
        out[1] = d1 * n[1];
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let (_, _, d2) = self.cap(self.distance(x));
        let n = self.distance_gradient(x);
        for i in 0..2 {
            for j in 0..2 {
                out[i * 2 + j] = d2 * n[i] * n[j];
            }
        }
    }
}

/// h = 1/φ for a barrier φ: a positive function blowing up at the boundary.
pub struct InverseBarrier(pub Arc<dyn ScalarField>);

impl ScalarField for InverseBarrier {
    fn value(&self, x: &[f64]) -> f64 {
        1.0 / self.0.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let p = self.0.value(x);
        self.0.gradient(x, out);
        out.iter_mut().for_each(|v| *v *= -1.0 / (p * p));
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let p = self.0.value(x);
        let mut g = vec![0.0; n];
        self.0.gradient(x, &mut g);
        self.0.hessian(x, out);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = -out[i * n + j] / (p * p) + 2.0 * g[i] * g[j] / (p * p * p);
            }
        }
    }
}

// ------------------------------------------------------------- potentials

#[derive(Debug, Clone, Copy)]
pub struct ConstantPotential(pub f64);

impl ScalarField for ConstantPotential {
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// V = ½k‖x‖².
#[derive(Debug, Clone, Copy)]
pub struct Harmonic {
    pub k: f64,
}

impl ScalarField for Harmonic {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.k * x.iter().map(|v| v * v).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.k * v;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            out[i * n + i] = self.k;
        }
    }
}

/// V = c·y + d·y².
#[derive(Debug, Clone, Copy)]
pub struct PolynomialY {
    pub linear: f64,
    pub quadratic: f64,
}

impl ScalarField for PolynomialY {
    fn value(&self, x: &[f64]) -> f64 {
        self.linear * x[1] + self.quadratic * x[1] * x[1]
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[1] = self.linear + 2.0 * self.quadratic * x[1];
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        out[n + 1] = 2.0 * self.quadratic;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{central_gradient, central_hessian};

    fn check_field(f: &dyn ScalarField, x: &[f64]) {
        let n = x.len();
        let mut ga = vec![0.0; n];
        let mut gn = vec![0.0; n];
        f.gradient(x, &mut ga);
        central_gradient(|y| f.value(y), x, &mut gn);
        for (a, b) in ga.iter().zip(&gn) {
            assert!((a - b).abs() < 1e-7 * (1.0 + a.abs()), "gradient {a} vs {b} at {x:?}");
        }
        let mut ha = vec![0.0; n * n];
        let mut hn = vec![0.0; n * n];
        f.hessian(x, &mut ha);
        central_hessian(|y| f.value(y), x, &mut hn);
        for (a, b) in ha.iter().zip(&hn) {
            assert!((a - b).abs() < 1e-5 * (1.0 + a.abs()), "hessian {a} vs {b} at {x:?}");
        }
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let helix = HelixDistance::new(1.0, 0.3).unwrap();
        check_field(&SqrtXy, &[0.7, 1.9]);
        check_field(&Xy, &[0.7, 1.9]);
        check_field(&RadialR, &[0.7, 1.9]);
        check_field(&HalfPlaneY, &[0.7, 1.9]);
        check_field(&UnitDisk, &[0.3, -0.2]);
        check_field(&WavyHalfPlane { amplitude: 0.5 }, &[0.7, 1.9]);
        check_field(&Harmonic { k: 1.5 }, &[0.7, -1.9]);
        check_field(&PolynomialY { linear: -1.0, quadratic: 2.0 }, &[0.7, 1.9]);
        check_field(&InverseBarrier(Arc::new(UnitDisk)), &[0.3, -0.2]);
        for x in [[0.4, 0.1], [1.0, 0.3], [2.0, 0.25], [0.0, 0.22], [5.0, 1.35]] {
            check_field(&helix, &x);
        }
    }

    #[test]
    fn conformal_partials_match_differences() {
        let m = ConformalMetric {
            base: PolarInverseR2::manifold(),
            potential: Arc::new(PolynomialY { linear: 0.3, quadratic: 0.2 }),
            energy: 4.0,
        };
        let x = [1.3, 0.4];
        let mut a = vec![0.0; 8];
        m.partials(&x, &mut a);
        let fd = crate::field::FiniteDiff(Arc::new(m));
        let mut b = vec![0.0; 8];
        fd.partials(&x, &mut b);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn helix_distance_geometry() {
        let h = HelixDistance::new(1.0, 0.3).unwrap();
        // on the strand z = θ/2π
        assert!(h.value(&[PI, 0.5]) < 1e-15);
        // distance is periodic in θ
        let a = h.value(&[0.3, 0.1]);
        let b = h.value(&[0.3 + 2.0 * PI, 0.1]);
        assert!((a - b).abs() < 1e-12);
        // plateau mid-band
        assert_eq!(h.value(&[0.0, 0.5]), h.plateau());
        assert!(HelixDistance::new(1.0, 0.6).is_err());
    }
}
