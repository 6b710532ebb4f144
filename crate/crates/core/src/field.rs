//! Scalar and metric-tensor fields on a chart, with central-difference
//! fallbacks for every derivative an implementation does not supply.

use std::sync::Arc;

/// Relative step for first derivatives.
pub const FD_STEP: f64 = 1e-5;
/// Relative step for second derivatives taken directly from values.
pub const FD_STEP_2: f64 = 1e-4;

#[inline]
pub fn fd_step(x: &[f64], rel: f64) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    rel * norm.max(1.0)
}

/// A real function on chart coordinates.
///
/// `gradient` returns coordinate partials (a covector), not the Riemannian
/// gradient. `hessian` returns the coordinate second partials in row-major
/// order. Both default to central differences of `value`.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        central_gradient(|y| self.value(y), x, out);
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        central_hessian(|y| self.value(y), x, out);
    }
}

/// A symmetric positive-definite tensor field g(x).
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes g(x) row-major into `g` (length n²).
    fn eval(&self, x: &[f64], g: &mut [f64]);

    /// Writes ∂ₖ g_ij at `dg[k·n² + i·n + j]` (length n³).
    fn partials(&self, x: &[f64], dg: &mut [f64]) {
        let n = self.dim();
        let h = fd_step(x, FD_STEP);
        let mut y = x.to_vec();
        let mut gp = vec![0.0; n * n];
        let mut gm = vec![0.0; n * n];
        for k in 0..n {
            y[k] = x[k] + h;
            self.eval(&y, &mut gp);
            y[k] = x[k] - h;
            self.eval(&y, &mut gm);
            y[k] = x[k];
            for ij in 0..n * n {
                dg[k * n * n + ij] = (gp[ij] - gm[ij]) / (2.0 * h);
            }
        }
    }
}

pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], out: &mut [f64]) {
    let h = fd_step(x, FD_STEP);
    let mut y = x.to_vec();
    for k in 0..x.len() {
        y[k] = x[k] + h;
        let fp = f(&y);
        y[k] = x[k] - h;
        let fm = f(&y);
        y[k] = x[k];
        out[k] = (fp - fm) / (2.0 * h);
    }
}

pub fn central_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let h = fd_step(x, FD_STEP_2);
    let f0 = f(x);
    let mut y = x.to_vec();
    for i in 0..n {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        out[i * n + i] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut probe = |di: f64, dj: f64| {
                y[i] = x[i] + di;
                y[j] = x[j] + dj;
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let d = (probe(h, h) - probe(h, -h) - probe(-h, h) + probe(-h, -h)) / (4.0 * h * h);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
}

/// Wraps a closure as a field with finite-difference derivatives.
pub struct FnField<F>(pub F);

impl<F> ScalarField for FnField<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Hides any analytic derivatives of the inner field so that the
/// finite-difference defaults are used.
pub struct FiniteDiff<T: ?Sized>(pub Arc<T>);

impl<T: ScalarField + ?Sized> ScalarField for FiniteDiff<T> {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
}

impl<T: MetricField + ?Sized> MetricField for FiniteDiff<T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, x: &[f64], g: &mut [f64]) {
        self.0.eval(x, g)
    }
}

/// A monotone reparametrisation t ↦ ϕ(t) of a barrier's values.
pub trait Warp: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
    fn second_derivative(&self, t: f64) -> f64;
}

/// ϕ(t) = tᵖ.
#[derive(Debug, Clone, Copy)]
pub struct PowerWarp(pub f64);

impl Warp for PowerWarp {
    fn value(&self, t: f64) -> f64 {
        t.powf(self.0)
    }
    fn derivative(&self, t: f64) -> f64 {
        self.0 * t.powf(self.0 - 1.0)
    }
    fn second_derivative(&self, t: f64) -> f64 {
        self.0 * (self.0 - 1.0) * t.powf(self.0 - 2.0)
    }
}

/// The composition ϕ∘φ, with chain-rule derivatives built from the inner
/// field's (possibly analytic) derivatives.
pub struct Warped {
    pub inner: Arc<dyn ScalarField>,
    pub warp: Arc<dyn Warp>,
}

impl ScalarField for Warped {
    fn value(&self, x: &[f64]) -> f64 {
        self.warp.value(self.inner.value(x))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let t = self.inner.value(x);
        self.inner.gradient(x, out);
        let d = self.warp.derivative(t);
        out.iter_mut().for_each(|v| *v *= d);
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let t = self.inner.value(x);
        let mut grad = vec![0.0; n];
        self.inner.gradient(x, &mut grad);
        self.inner.hessian(x, out);
        let d1 = self.warp.derivative(t);
        let d2 = self.warp.second_derivative(t);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = d1 * out[i * n + j] + d2 * grad[i] * grad[j];
            }
        }
    }
}
