//! Riemannian manifolds given by a single chart with an explicit metric
//! tensor: inner products, Levi-Civita connection coefficients, geodesic
//! shooting and the covariant first and second derivatives of scalar fields.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{GeodomError, Result};
use crate::field::{MetricField, ScalarField};
use crate::linalg;

/// A chart point.
pub type Point = Vec<f64>;

/// Metrics whose eigenvalue ratio exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Largest tolerated |g_ij − g_ji|.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub type ChartPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicAxis {
    pub axis: usize,
    pub period: f64,
}

#[derive(Clone)]
pub struct ChartManifold {
    metric: Arc<dyn MetricField>,
    periodic: Vec<PeriodicAxis>,
    chart_domain: Option<ChartPredicate>,
}

impl fmt::Debug for ChartManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartManifold")
            .field("dim", &self.dim())
            .field("periodic", &self.periodic)
            .finish_non_exhaustive()
    }
}

impl ChartManifold {
    pub fn new(metric: Arc<dyn MetricField>) -> Self {
        Self {
            metric,
            periodic: Vec::new(),
            chart_domain: None,
        }
    }

    pub fn with_periodic_axis(mut self, axis: usize, period: f64) -> Self {
        assert!(axis < self.dim() && period > 0.0);
        self.periodic.push(PeriodicAxis { axis, period });
        self
    }

    pub fn with_chart_domain(mut self, pred: ChartPredicate) -> Self {
        self.chart_domain = Some(pred);
        self
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn periodic_axes(&self) -> &[PeriodicAxis] {
        &self.periodic
    }

    pub fn metric_field(&self) -> &Arc<dyn MetricField> {
        &self.metric
    }

    pub fn chart_domain(&self) -> Option<&ChartPredicate> {
        self.chart_domain.as_ref()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().all(|v| v.is_finite())
            && self.chart_domain.as_ref().is_none_or(|p| p(x))
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(GeodomError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(GeodomError::ChartDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// Unchecked g(x), row-major.
    #[inline]
    pub fn metric_into(&self, x: &[f64], g: &mut [f64]) {
        self.metric.eval(x, g)
    }

    /// Unchecked ∂ₖ g_ij.
    #[inline]
    pub fn metric_partials_into(&self, x: &[f64], dg: &mut [f64]) {
        self.metric.partials(x, dg)
    }

    /// g(x), verified symmetric, positive definite and well conditioned.
    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let n = self.dim();
        let mut g = vec![0.0; n * n];
        self.metric.eval(x, &mut g);
        let defect = linalg::asymmetry(&g, n);
        if defect > SYMMETRY_TOL * (1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return Err(GeodomError::AsymmetricMetric {
                point: x.to_vec(),
                defect,
            });
        }
        let g = DMatrix::from_row_slice(n, n, &g);
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        let lo = eig.min();
        let hi = eig.max();
        if !(lo > 0.0) {
            return Err(GeodomError::NotPositiveDefinite { point: x.to_vec() });
        }
        if hi / lo > MAX_CONDITION {
            return Err(GeodomError::IllConditionedMetric {
                point: x.to_vec(),
                condition: hi / lo,
            });
        }
        Ok(g)
    }

    /// Shortest representative of a coordinate difference along axis `k`.
    #[inline]
    pub fn wrap_delta(&self, k: usize, d: f64) -> f64 {
        for ax in &self.periodic {
            if ax.axis == k {
                return d - ax.period * (d / ax.period).round();
            }
        }
        d
    }

    /// b − a with periodic axes reduced to the shortest representative.
    pub fn difference_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for k in 0..a.len() {
            out[k] = b[k] - a[k];
        }
        for ax in &self.periodic {
            let d = out[ax.axis];
            out[ax.axis] = d - ax.period * (d / ax.period).round();
        }
    }

    pub fn difference(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        self.difference_into(a, b, &mut out);
        out
    }

    /// ‖v‖_g at x.
    pub fn norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.metric(x)?;
        let v = DVector::from_column_slice(v);
        Ok(v.dot(&(&g * &v)).sqrt())
    }

    /// Γᵢⱼᵏ at x, from the metric and its first partials.
    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        let g = self.metric(x)?;
        let n = self.dim();
        let mut dg = vec![0.0; n * n * n];
        self.metric.partials(x, &mut dg);
        let chol = g
            .cholesky()
            .ok_or_else(|| GeodomError::NotPositiveDefinite { point: x.to_vec() })?;
        let mut data = vec![0.0; n * n * n];
        let d = |k: usize, i: usize, j: usize| dg[k * n * n + i * n + j];
        for i in 0..n {
            for j in 0..=i {
                let first_kind = DVector::from_fn(n, |l, _| {
                    0.5 * (d(i, j, l) + d(j, i, l) - d(l, i, j))
                });
                let second_kind = chol.solve(&first_kind);
                for k in 0..n {
                    data[k * n * n + i * n + j] = second_kind[k];
                    data[k * n * n + j * n + i] = second_kind[k];
                }
            }
        }
        Ok(Christoffel { n, data })
    }

    /// −Γ(x)[v, v], the geodesic acceleration, without domain checks.
    pub fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let mut g = vec![0.0; n * n];
        let mut dg = vec![0.0; n * n * n];
        self.metric.eval(x, &mut g);
        self.metric.partials(x, &mut dg);
        // w_l = Σ ∂ᵢg_jl vⁱvʲ − ½ Σ ∂_l g_ij vⁱvʲ
        for l in 0..n {
            let mut w = 0.0;
            for i in 0..n {
                for j in 0..n {
                    w += dg[i * n * n + j * n + l] * v[i] * v[j]
                        - 0.5 * dg[l * n * n + i * n + j] * v[i] * v[j];
                }
            }
            out[l] = -w;
        }
        if !linalg::cholesky_in_place(&mut g, n) {
            return Err(GeodomError::NotPositiveDefinite { point: x.to_vec() });
        }
        linalg::cholesky_solve(&g, n, out);
        Ok(())
    }

    /// Integrates ẍᵏ + Γᵏᵢⱼẋⁱẋʲ = 0 with `steps` fixed RK4 steps over [0, T].
    pub fn geodesic_shoot(&self, x0: &[f64], v0: &[f64], t_end: f64, steps: usize) -> Result<GeodesicSamples> {
        self.check_point(x0)?;
        if v0.len() != self.dim() {
            return Err(GeodomError::Dimension {
                expected: self.dim(),
                got: v0.len(),
            });
        }
        if steps == 0 {
            return Err(GeodomError::InvalidArgument("geodesic_shoot needs steps >= 1".into()));
        }
        let n = self.dim();
        let h = t_end / steps as f64;
        let mut out = GeodesicSamples {
            times: vec![0.0],
            points: vec![x0.to_vec()],
            velocities: vec![v0.to_vec()],
        };
        let mut x = x0.to_vec();
        let mut v = v0.to_vec();
        let mut kx = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut kv = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut xs = vec![0.0; n];
        let mut vs = vec![0.0; n];
        for step in 0..steps {
            let t = step as f64 * h;
            let escape = |x: &[f64], v: &[f64]| GeodomError::Escape {
                time: t,
                point: x.to_vec(),
                velocity: v.to_vec(),
            };
            for stage in 0..4 {
                let c = match stage {
                    0 => 0.0,
                    1 | 2 => 0.5 * h,
                    _ => h,
                };
                for i in 0..n {
                    if stage == 0 {
                        xs[i] = x[i];
                        vs[i] = v[i];
                    } else {
                        xs[i] = x[i] + c * kx[stage - 1][i];
                        vs[i] = v[i] + c * kv[stage - 1][i];
                    }
                }
                if !self.contains(&xs) {
                    return Err(escape(&x, &v));
                }
                kx[stage].copy_from_slice(&vs);
                self.geodesic_acceleration(&xs, &vs, &mut kv[stage])
                    .map_err(|_| escape(&x, &v))?;
            }
            for i in 0..n {
                x[i] += h / 6.0 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
                v[i] += h / 6.0 * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]);
            }
            if !self.contains(&x) {
                let last = out.points.last().unwrap().clone();
                let lastv = out.velocities.last().unwrap().clone();
                return Err(GeodomError::Escape {
                    time: t,
                    point: last,
                    velocity: lastv,
                });
            }
            out.times.push((step + 1) as f64 * h);
            out.points.push(x.clone());
            out.velocities.push(v.clone());
        }
        Ok(out)
    }

    /// Riemannian gradient g⁻¹ d(field).
    pub fn riem_grad(&self, field: &dyn ScalarField, x: &[f64]) -> Result<TangentVector> {
        let g = self.metric(x)?;
        let mut df = vec![0.0; self.dim()];
        field.gradient(x, &mut df);
        let comps = g
            .cholesky()
            .ok_or_else(|| GeodomError::NotPositiveDefinite { point: x.to_vec() })?
            .solve(&DVector::from_vec(df));
        Ok(TangentVector {
            base: x.to_vec(),
            comps: comps.as_slice().to_vec(),
        })
    }

    /// Covariant Hessian ∂ᵢ∂ⱼf − Γᵏᵢⱼ ∂ₖf as a symmetric matrix.
    pub fn cov_hessian(&self, field: &dyn ScalarField, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let gamma = self.christoffel(x)?;
        let mut df = vec![0.0; n];
        let mut ddf = vec![0.0; n * n];
        field.gradient(x, &mut df);
        field.hessian(x, &mut ddf);
        let mut h = DMatrix::from_row_slice(n, n, &ddf);
        for i in 0..n {
            for j in 0..n {
                let corr: f64 = (0..n).map(|k| gamma.get(k, i, j) * df[k]).sum();
                h[(i, j)] -= corr;
            }
        }
        let sym = (&h + h.transpose()) * 0.5;
        Ok(sym)
    }

    /// A g-orthonormal basis of T_x, or of the g-orthogonal complement of
    /// `normal` when given.
    pub fn orthonormal_frame(&self, x: &[f64], normal: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        let g = self.metric(x)?;
        let n = self.dim();
        let ip = |u: &DVector<f64>, v: &DVector<f64>| u.dot(&(&g * v));
        let mut basis: Vec<DVector<f64>> = Vec::new();
        if let Some(nv) = normal {
            let nv = DVector::from_column_slice(nv);
            let len = ip(&nv, &nv).sqrt();
            if !(len > 0.0) {
                return Err(GeodomError::InvalidArgument("zero normal vector".into()));
            }
            basis.push(nv / len);
        }
        let skip = basis.len();
        for k in 0..n {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            for b in &basis {
                let c = ip(&e, b);
                e -= b * c;
            }
            let len = ip(&e, &e).sqrt();
            if len > 1e-10 {
                basis.push(e / len);
            }
            if basis.len() == n {
                break;
            }
        }
        Ok(basis
            .into_iter()
            .skip(skip)
            .map(|b| b.as_slice().to_vec())
            .collect())
    }
}

/// Connection coefficients at one point, `get(k, i, j)` = Γᵏᵢⱼ.
#[derive(Debug, Clone)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[k * self.n * self.n + i * self.n + j]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub comps: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: Point, comps: Vec<f64>) -> Self {
        Self { base, comps }
    }
}

/// ⟨u, v⟩_g at their common base point.
pub fn inner(m: &ChartManifold, u: &TangentVector, v: &TangentVector) -> Result<f64> {
    if u.base != v.base {
        return Err(GeodomError::InvalidArgument(
            "tangent vectors have different base points".into(),
        ));
    }
    let g = m.metric(&u.base)?;
    let a = DVector::from_column_slice(&u.comps);
    let b = DVector::from_column_slice(&v.comps);
    Ok(a.dot(&(&g * b)))
}

#[derive(Debug, Clone)]
pub struct GeodesicSamples {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub velocities: Vec<Vec<f64>>,
}

impl GeodesicSamples {
    pub fn endpoint(&self) -> &[f64] {
        self.points.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{ConformalMetric, Euclidean, FlatCylinder, PolarInverseR2};
    use crate::field::{FiniteDiff, FnField};

    fn polar() -> ChartManifold {
        PolarInverseR2::manifold()
    }

    #[test]
    fn inner_examples() {
        let e = Euclidean::manifold(2);
        let u = TangentVector::new(vec![3.0, -1.0], vec![1.0, 0.0]);
        let v = TangentVector::new(vec![3.0, -1.0], vec![0.0, 1.0]);
        assert_eq!(inner(&e, &u, &v).unwrap(), 0.0);

        let w = TangentVector::new(vec![2.0, 0.0], vec![0.0, 1.0]);
        assert!((inner(&polar(), &w, &w).unwrap() - 0.25).abs() < 1e-15);

        let z = TangentVector::new(vec![2.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(inner(&polar(), &z, &z).unwrap(), 0.0);
    }

    #[test]
    fn inner_rejects_points_outside_chart() {
        let u = TangentVector::new(vec![-1.0, 0.0], vec![1.0, 0.0]);
        assert!(matches!(
            inner(&polar(), &u, &u),
            Err(GeodomError::ChartDomain { .. })
        ));
    }

    #[test]
    fn christoffel_examples() {
        let e = Euclidean::manifold(2);
        assert_eq!(e.christoffel(&[0.3, 4.0]).unwrap().max_abs(), 0.0);

        // g = diag(1, r⁻²): Γʳ_θθ = r⁻³, Γᶿ_rθ = −r⁻¹.
        let gamma = polar().christoffel(&[1.0, 0.0]).unwrap();
        assert!((gamma.get(0, 1, 1) - 1.0).abs() < 1e-12);
        assert!((gamma.get(1, 0, 1) + 1.0).abs() < 1e-12);
        assert!((gamma.get(1, 1, 0) + 1.0).abs() < 1e-12);
        assert!(gamma.get(0, 0, 0).abs() < 1e-12);

        let conf = ConformalMetric::manifold(Euclidean::manifold(2), Arc::new(FnField(|_: &[f64]| 0.0)), 1.0);
        assert!(conf.christoffel(&[0.5, 0.5]).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn finite_difference_christoffel_matches_analytic() {
        let analytic = Arc::new(PolarInverseR2);
        let fd = ChartManifold::new(Arc::new(FiniteDiff(analytic.clone())));
        for r in [0.5, 1.0, 2.5] {
            let a = polar().christoffel(&[r, 0.3]).unwrap();
            let b = fd.christoffel(&[r, 0.3]).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((a.get(k, i, j) - b.get(k, i, j)).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn ill_conditioned_metric_is_rejected() {
        struct Squashed;
        impl MetricField for Squashed {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, _x: &[f64], g: &mut [f64]) {
                g.copy_from_slice(&[1.0, 0.0, 0.0, 1e-14]);
            }
        }
        let m = ChartManifold::new(Arc::new(Squashed));
        assert!(matches!(
            m.christoffel(&[0.0, 0.0]),
            Err(GeodomError::IllConditionedMetric { .. })
        ));
    }

    #[test]
    fn geodesic_shoot_examples() {
        let e = Euclidean::manifold(2);
        let g = e.geodesic_shoot(&[0.0, 0.0], &[1.0, 0.0], 1.0, 10).unwrap();
        assert!((g.endpoint()[0] - 1.0).abs() < 1e-14 && g.endpoint()[1].abs() < 1e-14);

        let g = polar().geodesic_shoot(&[2.0, 0.0], &[-1.0, 0.0], 1.0, 100).unwrap();
        assert!((g.endpoint()[0] - 1.0).abs() < 1e-12);
        assert!(g.points.iter().all(|p| p[1] == 0.0));

        let cyl = FlatCylinder::manifold();
        let pi = std::f64::consts::PI;
        let g = cyl.geodesic_shoot(&[0.0, 0.0], &[1.0, 1.0], pi, 50).unwrap();
        assert!((g.endpoint()[0] - pi).abs() < 1e-12 && (g.endpoint()[1] - pi).abs() < 1e-12);
    }

    #[test]
    fn geodesic_escape_reports_last_state() {
        let err = polar()
            .geodesic_shoot(&[1.0, 0.0], &[-2.0, 0.0], 1.0, 100)
            .unwrap_err();
        match err {
            GeodomError::Escape { point, .. } => assert!(point[0] > 0.0 && point[0] < 0.05),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn geodesic_speed_is_conserved() {
        let pi = std::f64::consts::PI;
        let harmonic = Arc::new(crate::builtins::Harmonic { k: 1.0 });
        let cases: Vec<(ChartManifold, Vec<f64>, Vec<f64>)> = vec![
            (Euclidean::manifold(2), vec![0.1, 0.2], vec![0.3, -0.7]),
            (polar(), vec![2.0, 0.4], vec![0.3, 1.1]),
            (FlatCylinder::manifold(), vec![pi - 0.1, 0.0], vec![1.0, 0.2]),
            (
                ConformalMetric::manifold(Euclidean::manifold(2), harmonic, 2.0),
                vec![0.2, 0.5],
                vec![0.4, 0.1],
            ),
        ];
        for (m, x0, v0) in cases {
            let path = m.geodesic_shoot(&x0, &v0, 1.0, 1000).unwrap();
            let s0 = m.norm(&x0, &v0).unwrap();
            let drift = path
                .points
                .iter()
                .zip(&path.velocities)
                .map(|(x, v)| (m.norm(x, v).unwrap() - s0).abs() / s0)
                .fold(0.0, f64::max);
            assert!(drift < 1e-8, "speed drift {drift:e}");
        }
    }

    #[test]
    fn riem_grad_examples() {
        let e = Euclidean::manifold(2);
        let y = FnField(|x: &[f64]| x[1]);
        let g = e.riem_grad(&y, &[5.0, -3.0]).unwrap();
        assert!((g.comps[0]).abs() < 1e-10 && (g.comps[1] - 1.0).abs() < 1e-10);

        let r = FnField(|x: &[f64]| x[0]);
        let g = polar().riem_grad(&r, &[3.0, 1.0]).unwrap();
        assert!((g.comps[0] - 1.0).abs() < 1e-10 && g.comps[1].abs() < 1e-10);
        assert!((inner(&polar(), &g, &g).unwrap() - 1.0).abs() < 1e-10);

        let sq = FnField(|x: &[f64]| (x[0] * x[1]).sqrt());
        let g = e.riem_grad(&sq, &[1.0, 1.0]).unwrap();
        assert!((g.comps[0] - 0.5).abs() < 1e-9 && (g.comps[1] - 0.5).abs() < 1e-9);
        assert!((inner(&e, &g, &g).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn riem_grad_pairs_with_directional_derivative() {
        let m = polar();
        let f = FnField(|x: &[f64]| x[0] * x[0] * x[1].cos() + x[1]);
        let x = [1.7, 0.4];
        let grad = m.riem_grad(&f, &x).unwrap();
        for v in [[1.0, 0.0], [0.3, -2.0], [-0.5, 0.5]] {
            let h = 1e-6;
            let dd = (f.value(&[x[0] + h * v[0], x[1] + h * v[1]])
                - f.value(&[x[0] - h * v[0], x[1] - h * v[1]]))
                / (2.0 * h);
            let ip = inner(&m, &grad, &TangentVector::new(x.to_vec(), v.to_vec())).unwrap();
            assert!((ip - dd).abs() < 1e-7);
        }
    }

    #[test]
    fn cov_hessian_examples() {
        let e = Euclidean::manifold(2);
        let disk = FnField(|x: &[f64]| 1.0 - x[0] * x[0] - x[1] * x[1]);
        let h = e.cov_hessian(&disk, &[0.2, -0.3]).unwrap();
        assert!((h[(0, 0)] + 2.0).abs() < 1e-6 && (h[(1, 1)] + 2.0).abs() < 1e-6);
        assert!(h[(0, 1)].abs() < 1e-6);

        let y = FnField(|x: &[f64]| x[1]);
        let h = e.cov_hessian(&y, &[1.0, 2.0]).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-9));

        // H_θθ = −Γʳ_θθ ∂ᵣr = −r⁻³, i.e. −1 at r = 1.
        let r = FnField(|x: &[f64]| x[0]);
        let h = polar().cov_hessian(&r, &[1.0, 0.0]).unwrap();
        assert!((h[(1, 1)] + 1.0).abs() < 1e-6);
        assert!(h[(0, 0)].abs() < 1e-6 && h[(0, 1)].abs() < 1e-6);
    }

    #[test]
    fn cov_hessian_is_second_derivative_along_geodesics() {
        let m = polar();
        let f = FnField(|x: &[f64]| x[0].powi(3) * (2.0 * x[1]).sin() + x[0]);
        let x = [1.3, 0.6];
        let h = m.cov_hessian(&f, &x).unwrap();
        assert!((h[(0, 1)] - h[(1, 0)]).abs() < 1e-10);
        for v in [[1.0, 0.0], [0.2, 0.9], [-0.6, 0.4]] {
            let s = 1e-3;
            let fwd = m.geodesic_shoot(&x, &v, s, 20).unwrap();
            let bwd = m.geodesic_shoot(&x, &[-v[0], -v[1]], s, 20).unwrap();
            let d2 = (f.value(fwd.endpoint()) - 2.0 * f.value(&x) + f.value(bwd.endpoint())) / (s * s);
            let hv = h[(0, 0)] * v[0] * v[0] + 2.0 * h[(0, 1)] * v[0] * v[1] + h[(1, 1)] * v[1] * v[1];
            assert!((hv - d2).abs() < 1e-5 * (1.0 + hv.abs()), "{hv} vs {d2}");
        }
    }

    #[test]
    fn constant_field_derivatives_vanish() {
        let c = FnField(|_: &[f64]| 7.0);
        let m = polar();
        let g = m.riem_grad(&c, &[2.0, 1.0]).unwrap();
        assert!(g.comps.iter().all(|v| v.abs() < 1e-9));
        let h = m.cov_hessian(&c, &[2.0, 1.0]).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn periodic_difference_is_shortest() {
        let cyl = FlatCylinder::manifold();
        let two_pi = 2.0 * std::f64::consts::PI;
        let d = cyl.difference(&[two_pi - 0.1, 0.0], &[0.1, 1.0]);
        assert!((d[0] - 0.2).abs() < 1e-12 && d[1] == 1.0);
        let u = TangentVector::new(vec![0.3, 0.0], vec![1.0, 2.0]);
        let v = TangentVector::new(vec![0.3 + two_pi, 0.0], vec![1.0, 2.0]);
        assert_eq!(inner(&cyl, &u, &u).unwrap(), inner(&cyl, &v, &v).unwrap());
    }

    #[test]
    fn orthonormal_frame_is_orthonormal() {
        let m = polar();
        let x = [0.7, 0.0];
        let frame = m.orthonormal_frame(&x, Some(&[1.0, 1.0])).unwrap();
        assert_eq!(frame.len(), 1);
        let g = m.metric(&x).unwrap();
        let t = DVector::from_column_slice(&frame[0]);
        let nrm = DVector::from_column_slice(&[1.0, 1.0]);
        assert!((t.dot(&(&g * &t)) - 1.0).abs() < 1e-12);
        assert!(t.dot(&(&g * nrm)).abs() < 1e-12);
    }
}
