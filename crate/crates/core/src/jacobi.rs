//! Fixed-energy motion ẍ = −∇V through the Jacobi metric (E − V)·g: the
//! metric itself, the Hessian transformation rule under the conformal change,
//! the compatibility bound ⟨∇φ, ∇V⟩ ≥ −M′φ, and the time reparametrization
//! turning Jacobi geodesics into trajectories.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builtins::ConformalMetric;
use crate::convexity::{bounded_above, level_sample, Status, Verdict};
use crate::domain::{Barrier, Region};
use crate::error::{GeodomError, Result};
use crate::field::ScalarField;
use crate::manifold::{ChartManifold, Point};
use crate::pathspace::{self, DiscretePath};

#[derive(Clone)]
pub struct LagrangianProblem {
    pub manifold: ChartManifold,
    pub potential: Arc<dyn ScalarField>,
    pub energy: f64,
    pub barrier: Option<Barrier>,
}

impl std::fmt::Debug for LagrangianProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LagrangianProblem")
            .field("manifold", &self.manifold)
            .field("energy", &self.energy)
            .field("barrier", &self.barrier)
            .finish_non_exhaustive()
    }
}

impl LagrangianProblem {
    pub fn new(manifold: ChartManifold, potential: Arc<dyn ScalarField>, energy: f64) -> Result<Self> {
        if !energy.is_finite() {
            return Err(GeodomError::InvalidArgument(format!("energy {energy} is not finite")));
        }
        Ok(Self {
            manifold,
            potential,
            energy,
            barrier: None,
        })
    }

    pub fn with_barrier(mut self, barrier: Barrier) -> Self {
        self.barrier = Some(barrier);
        self
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        self.potential.value(x)
    }

    /// E − V(x), or an energy-level error when it is not positive.
    pub fn kinetic(&self, x: &[f64]) -> Result<f64> {
        let v = self.potential(x);
        let w = self.energy - v;
        if !(w > 0.0) {
            return Err(GeodomError::EnergyLevel {
                point: x.to_vec(),
                energy: self.energy,
                potential: v,
            });
        }
        Ok(w)
    }

    /// Checks E > V at every point.
    pub fn check_points<'a>(&self, points: impl IntoIterator<Item = &'a Point>) -> Result<()> {
        for x in points {
            self.kinetic(x)?;
        }
        Ok(())
    }

    /// Coordinate differential of u = ½ log(E − V).
    fn du(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.kinetic(x)?;
        let mut dv = vec![0.0; x.len()];
        self.potential.gradient(x, &mut dv);
        Ok(dv.into_iter().map(|d| -d / (2.0 * w)).collect())
    }

    /// The barrier carried over to the Jacobi metric.
    pub fn jacobi_barrier(&self) -> Option<Barrier> {
        self.barrier.as_ref().map(|b| b.with_manifold(jacobi_metric(self)))
    }
}

/// (E − V)·g on the chart domain intersected with {V < E}.
pub fn jacobi_metric(prob: &LagrangianProblem) -> ChartManifold {
    ConformalMetric::manifold(prob.manifold.clone(), prob.potential.clone(), prob.energy)
}

/// Draws `n` points of the box inside D ∩ {V < E}.
pub fn sample_region(prob: &LagrangianProblem, b: &Barrier, region: &Region, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 100 * n.max(1) {
        attempts += 1;
        let x = region.sample(&mut rng);
        if b.contains(&x) && prob.potential(&x) < prob.energy {
            out.push(x);
        }
    }
    out
}

/// One side of the conformal Hessian rule at (x, v).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianPair {
    /// H^E_φ[v, v] from the Jacobi connection.
    pub jacobi: f64,
    /// H_φ[v, v] + ⟨∇φ,∇u⟩⟨v,v⟩ − 2⟨∇u,v⟩⟨∇φ,v⟩ in the base metric.
    pub transformed: f64,
}

pub fn hessian_pair(prob: &LagrangianProblem, b: &Barrier, x: &[f64], v: &[f64]) -> Result<HessianPair> {
    let base = &prob.manifold;
    let jac = jacobi_metric(prob);
    let phi = b.field().as_ref();
    let n = base.dim();
    let vv = DVector::from_column_slice(v);
    let he = jac.cov_hessian(phi, x)?;
    let h = base.cov_hessian(phi, x)?;
    let g = base.metric(x)?;
    let du = DVector::from_vec(prob.du(x)?);
    let mut dphi = vec![0.0; n];
    phi.gradient(x, &mut dphi);
    let dphi = DVector::from_vec(dphi);
    let grad_u = g
        .clone()
        .cholesky()
        .ok_or_else(|| GeodomError::NotPositiveDefinite { point: x.to_vec() })?
        .solve(&du);
    let cross = dphi.dot(&grad_u);
    let transformed = vv.dot(&(&h * &vv)) + cross * vv.dot(&(&g * &vv)) - 2.0 * du.dot(&vv) * dphi.dot(&vv);
    Ok(HessianPair {
        jacobi: vv.dot(&(&he * &vv)),
        transformed,
    })
}

/// max |H^E_φ[v,v] − (H_φ[v,v] + ⟨∇φ,∇u⟩⟨v,v⟩ − 2⟨∇u,v⟩⟨∇φ,v⟩)| / (1 + |H^E_φ[v,v]|)
/// over the points and `directions` seeded random directions at each.
pub fn hessian_transform_check(
    prob: &LagrangianProblem,
    b: &Barrier,
    points: &[Point],
    directions: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = prob.manifold.dim();
    let mut worst: f64 = 0.0;
    for x in points {
        for _ in 0..directions {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pair = hessian_pair(prob, b, x, &v)?;
            worst = worst.max((pair.jacobi - pair.transformed).abs() / (1.0 + pair.jacobi.abs()));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepReport {
    /// (a, M′ on that level).
    pub per_level: Vec<(f64, f64)>,
    pub m_prime: f64,
    pub verdict: Verdict,
}

/// M′ = max(−⟨∇φ, ∇V⟩/φ, 0) on each level, and whether it stays bounded
/// as the levels shrink.
pub fn rep_check(
    prob: &LagrangianProblem,
    b: &Barrier,
    levels: &[f64],
    samples: usize,
    seed: u64,
    region: &Region,
) -> Result<RepReport> {
    let base = &prob.manifold;
    let n = base.dim();
    let mut per_level = Vec::with_capacity(levels.len());
    for (idx, &a) in levels.iter().enumerate() {
        let pts = level_sample(b, a, samples, seed.wrapping_add(idx as u64), region)?;
        let mut worst: f64 = 0.0;
        let mut dv = vec![0.0; n];
        for x in &pts.points {
            let grad = base.riem_grad(b.field().as_ref(), x)?;
            prob.potential.gradient(x, &mut dv);
            let inner: f64 = grad.comps.iter().zip(&dv).map(|(g, d)| g * d).sum();
            worst = worst.max(-inner / b.phi(x));
        }
        per_level.push((a, if pts.points.is_empty() { f64::NAN } else { worst + 0.0 }));
    }
    let values: Vec<f64> = per_level.iter().map(|p| p.1).collect();
    let m_prime = values.iter().copied().filter(|v| !v.is_nan()).fold(0.0, f64::max);
    let verdict = match bounded_above(&values, 0.0) {
        None => Verdict {
            status: Status::Indeterminate,
            reason: "fewer than 3 usable levels".into(),
        },
        Some(true) if m_prime.is_finite() => Verdict {
            status: Status::Pass,
            reason: format!("M' = {m_prime:.4e} stable across levels"),
        },
        _ => Verdict {
            status: Status::Fail,
            reason: format!("M' grows as a -> 0 (last {:.4e})", values.last().unwrap()),
        },
    };
    Ok(RepReport {
        per_level,
        m_prime,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Point,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// ½⟨ẋ, ẋ⟩ + V per sample.
    pub energy_profile: Vec<f64>,
    /// |ẋ|_g per sample.
    pub speeds: Vec<f64>,
    /// The constant c in dt/ds = c/(E − V).
    pub c: f64,
    /// max |D_t ẋ + ∇V|_g over interior samples.
    pub ode_residual: f64,
}

impl Trajectory {
    pub fn energy_spread(&self) -> f64 {
        pathspace::spread(&self.energy_profile)
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Rows: t, coordinates, speed, energy.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.samples.first().map_or(0, |s| s.x.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.push("speed".into());
        header.push("energy".into());
        w.write_record(&header)?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row = vec![format!("{}", s.t)];
            row.extend(s.x.iter().map(|v| format!("{v}")));
            row.push(format!("{}", self.speeds[i]));
            row.push(format!("{}", self.energy_profile[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Residuals above this (relative to 1 + max |∇V|) mark a failed
/// reparametrization.
pub const REPARAM_TOL: f64 = 1e-2;

/// Fourth-order first derivative of uniformly spaced samples (spacing h).
fn derivative(xs: &[Point], h: f64) -> Vec<Vec<f64>> {
    let m = xs.len();
    let n = xs[0].len();
    let at = |i: usize, c: usize| xs[i][c];
    (0..m)
        .map(|i| {
            (0..n)
                .map(|c| {
                    if m < 5 {
                        let (a, b) = if i == 0 { (0, 1) } else if i == m - 1 { (m - 2, m - 1) } else { (i - 1, i + 1) };
                        (at(b, c) - at(a, c)) / ((b - a) as f64 * h)
                    } else if i >= 2 && i + 2 < m {
                        (-at(i + 2, c) + 8.0 * at(i + 1, c) - 8.0 * at(i - 1, c) + at(i - 2, c)) / (12.0 * h)
                    } else if i < 2 {
                        (-25.0 * at(i, c) + 48.0 * at(i + 1, c) - 36.0 * at(i + 2, c) + 16.0 * at(i + 3, c)
                            - 3.0 * at(i + 4, c))
                            / (12.0 * h)
                    } else {
                        (25.0 * at(i, c) - 48.0 * at(i - 1, c) + 36.0 * at(i - 2, c) - 16.0 * at(i - 3, c)
                            + 3.0 * at(i - 4, c))
                            / (12.0 * h)
                    }
                })
                .collect()
        })
        .collect()
}

/// Reparametrizes a Jacobi geodesic x(s), s ∈ [0, 1], by dt/ds = c/(E − V).
///
/// A constant-speed Jacobi geodesic has (E − V)|x′|²_g = σ² with σ² = 2f_E,
/// and ½|ẋ|²_g = E − V then forces c = σ/√2 = √f_E. The energy profile and
/// the residual of D_t ẋ = −∇V are measured afterwards, not imposed.
pub fn trajectory_from_geodesic(prob: &LagrangianProblem, path: &DiscretePath) -> Result<Trajectory> {
    let base = &prob.manifold;
    let k = path.k();
    let n = path.dim();
    // lifted copy so that plain differences are valid across periodic seams
    let mut nodes: Vec<Point> = Vec::with_capacity(k + 1);
    nodes.push(path.p().to_vec());
    for i in 0..k {
        let d = base.difference(&path.nodes()[i], &path.nodes()[i + 1]);
        let next = nodes[i].iter().zip(&d).map(|(a, b)| a + b).collect();
        nodes.push(next);
    }

    let stationary = nodes.iter().all(|x| x == &nodes[0]);
    if stationary {
        let x = &nodes[0];
        let v = prob.potential(x);
        if (prob.energy - v).abs() > 1e-12 * prob.energy.abs().max(1.0) {
            return Err(GeodomError::EnergyLevel {
                point: x.clone(),
                energy: prob.energy,
                potential: v,
            });
        }
        let samples = (0..=k)
            .map(|i| TrajectorySample {
                t: i as f64 / k as f64,
                x: x.clone(),
                v: vec![0.0; n],
            })
            .collect();
        return Ok(Trajectory {
            samples,
            energy_profile: vec![v; k + 1],
            speeds: vec![0.0; k + 1],
            c: 0.0,
            ode_residual: 0.0,
        });
    }

    let w: Vec<f64> = nodes.iter().map(|x| prob.kinetic(x)).collect::<Result<_>>()?;
    let jac = jacobi_metric(prob);
    let c = pathspace::energy(path, &jac)?.sqrt();
    let h = 1.0 / k as f64;

    let mut t = vec![0.0; k + 1];
    for i in 0..k {
        let mid: Vec<f64> = nodes[i].iter().zip(&nodes[i + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let wm = prob.kinetic(&mid)?;
        t[i + 1] = t[i] + c * h / 6.0 * (1.0 / w[i] + 4.0 / wm + 1.0 / w[i + 1]);
    }

    let dx = derivative(&nodes, h);
    let mut samples = Vec::with_capacity(k + 1);
    let mut energy_profile = Vec::with_capacity(k + 1);
    let mut speeds = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let v: Vec<f64> = dx[i].iter().map(|d| d * w[i] / c).collect();
        let speed = base.norm(&nodes[i], &v)?;
        energy_profile.push(0.5 * speed * speed + prob.potential(&nodes[i]));
        speeds.push(speed);
        samples.push(TrajectorySample {
            t: t[i],
            x: nodes[i].clone(),
            v,
        });
    }

    let ode_residual = lagrangian_residual(prob, &samples)?;
    let mut dv = vec![0.0; n];
    let grad_scale = nodes
        .iter()
        .map(|x| {
            prob.potential.gradient(x, &mut dv);
            dv.iter().map(|d| d * d).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);
    if !(ode_residual <= REPARAM_TOL * (1.0 + grad_scale)) {
        return Err(GeodomError::InvalidArgument(format!(
            "reparametrization failed: residual {ode_residual:.3e} of D_t x' + grad V"
        )));
    }
    Ok(Trajectory {
        samples,
        energy_profile,
        speeds,
        c,
        ode_residual,
    })
}

/// max |ẍ + Γ(ẋ, ẋ) + g⁻¹dV|_g at interior samples, with ẍ from
/// non-uniform central differences of the velocities.
fn lagrangian_residual(prob: &LagrangianProblem, samples: &[TrajectorySample]) -> Result<f64> {
    let base = &prob.manifold;
    let n = base.dim();
    let mut worst: f64 = 0.0;
    let mut geo = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for i in 1..samples.len().saturating_sub(1) {
        let (a, b, c) = (&samples[i - 1], &samples[i], &samples[i + 1]);
        let h0 = b.t - a.t;
        let h1 = c.t - b.t;
        let acc: Vec<f64> = (0..n)
            .map(|j| {
                (-h1 / (h0 * (h0 + h1))) * a.v[j]
                    + ((h1 - h0) / (h0 * h1)) * b.v[j]
                    + (h0 / (h1 * (h0 + h1))) * c.v[j]
            })
            .collect();
        base.geodesic_acceleration(&b.x, &b.v, &mut geo)?;
        prob.potential.gradient(&b.x, &mut dv);
        let g = base.metric(&b.x)?;
        let grad_v = g
            .clone()
            .cholesky()
            .ok_or_else(|| GeodomError::NotPositiveDefinite { point: b.x.clone() })?
            .solve(&DVector::from_column_slice(&dv));
        let r: Vec<f64> = (0..n).map(|j| acc[j] - geo[j] + grad_v[j]).collect();
        worst = worst.max(base.norm(&b.x, &r)?);
    }
    Ok(worst)
}
