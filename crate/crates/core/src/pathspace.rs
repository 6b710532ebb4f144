//! Discrete fixed-endpoint paths x₀ … x_K on the uniform grid sᵢ = i/K, the
//! discrete energy and its penalized version, their exact gradients with
//! respect to the interior nodes, and Euler–Lagrange diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::Barrier;
use crate::error::{GeodomError, Result};
use crate::linalg;
use crate::manifold::{ChartManifold, Point};

/// Nodes of a discrete path. Periodic coordinates are stored lifted (no
/// wrapping between consecutive nodes) except that the last node is always
/// exactly q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    nodes: Vec<Point>,
}

impl DiscretePath {
    pub fn new(nodes: Vec<Point>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(GeodomError::InvalidArgument(format!(
                "a path needs K >= 2 segments, got {}",
                nodes.len().saturating_sub(1)
            )));
        }
        let n = nodes[0].len();
        if let Some(bad) = nodes.iter().find(|x| x.len() != n) {
            return Err(GeodomError::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        Ok(Self { nodes })
    }

    /// Chart-linear interpolation from p to q + Σ kₐ·periodₐ eₐ over the
    /// periodic axes of `m` (the shortest representative of q − p is used
    /// as the base difference).
    pub fn linear(m: &ChartManifold, p: &[f64], q: &[f64], k: usize, winding: &[i64]) -> Result<Self> {
        m.check_point(p)?;
        m.check_point(q)?;
        if k < 2 {
            return Err(GeodomError::InvalidArgument(format!("K = {k} must be >= 2")));
        }
        let axes = m.periodic_axes();
        if !winding.is_empty() && winding.len() != axes.len() {
            return Err(GeodomError::InvalidArgument(format!(
                "winding has {} entries for {} periodic axes",
                winding.len(),
                axes.len()
            )));
        }
        let mut delta = m.difference(p, q);
        for (ax, w) in axes.iter().zip(winding) {
            delta[ax.axis] += *w as f64 * ax.period;
        }
        let mut nodes: Vec<Point> = (0..=k)
            .map(|i| {
                let t = i as f64 / k as f64;
                p.iter().zip(&delta).map(|(a, d)| a + t * d).collect()
            })
            .collect();
        nodes[k] = q.to_vec();
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Number of segments.
    pub fn k(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn p(&self) -> &[f64] {
        &self.nodes[0]
    }

    pub fn q(&self) -> &[f64] {
        &self.nodes[self.k()]
    }

    /// Replaces the interior nodes. The endpoints are kept untouched.
    pub fn with_interior(&self, interior: &[Point]) -> Result<Self> {
        if interior.len() != self.k() - 1 {
            return Err(GeodomError::InvalidArgument(format!(
                "expected {} interior nodes, got {}",
                self.k() - 1,
                interior.len()
            )));
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        nodes.push(self.nodes[0].clone());
        nodes.extend(interior.iter().cloned());
        nodes.push(self.nodes[self.k()].clone());
        Self::new(nodes)
    }

    /// The path traversed backwards.
    pub fn reversed(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        Self { nodes }
    }

    /// Net number of turns around each periodic axis of `m`.
    pub fn winding(&self, m: &ChartManifold) -> Vec<i64> {
        let n = self.dim();
        let mut total = vec![0.0; n];
        let mut d = vec![0.0; n];
        for w in self.nodes.windows(2) {
            m.difference_into(&w[0], &w[1], &mut d);
            for (t, v) in total.iter_mut().zip(&d) {
                *t += v;
            }
        }
        let base = m.difference(self.p(), self.q());
        m.periodic_axes()
            .iter()
            .map(|ax| ((total[ax.axis] - base[ax.axis]) / ax.period).round() as i64)
            .collect()
    }

    /// Largest chart distance between corresponding nodes.
    pub fn max_node_distance(&self, other: &DiscretePath) -> f64 {
        self.nodes
            .iter()
            .zip(&other.nodes)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Value, gradient and diagnostics of the discrete penalized energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEval {
    /// ½K Σ ⟨Δᵢ, Δᵢ⟩_{g(mᵢ)}.
    pub f: f64,
    /// Σⱼ ε/φ(xⱼ)² · 1/K over all K + 1 nodes.
    pub penalty: f64,
    /// Coordinate gradient of f + penalty at the K − 1 interior nodes.
    pub grad: Vec<Vec<f64>>,
    /// ½|ẋ|² − ε/φ² per segment.
    pub e_eps: Vec<f64>,
    /// 2ε/φ³ per node.
    pub lambda: Vec<f64>,
    pub min_phi: f64,
}

impl PathEval {
    pub fn f_eps(&self) -> f64 {
        self.f + self.penalty
    }

    pub fn e_spread(&self) -> f64 {
        spread(&self.e_eps)
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambda.iter().copied().fold(0.0, f64::max)
    }
}

pub(crate) fn spread(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn midpoint_into(a: &[f64], d: &[f64], out: &mut [f64]) {
    for i in 0..a.len() {
        out[i] = a[i] + 0.5 * d[i];
    }
}

/// Per-segment metric data at the midpoints.
struct Segments {
    n: usize,
    delta: Vec<f64>,
    g: Vec<f64>,
    dg: Vec<f64>,
}

impl Segments {
    fn build(path: &DiscretePath, m: &ChartManifold, partials: bool) -> Result<Self> {
        let n = path.dim();
        if n != m.dim() {
            return Err(GeodomError::Dimension {
                expected: m.dim(),
                got: n,
            });
        }
        for x in path.nodes() {
            if !m.contains(x) {
                return Err(GeodomError::ChartDomain { point: x.clone() });
            }
        }
        let k = path.k();
        let mut delta = vec![0.0; k * n];
        let mut g = vec![0.0; k * n * n];
        let mut dg = if partials { vec![0.0; k * n * n * n] } else { Vec::new() };
        let mut mid = vec![0.0; n];
        for i in 0..k {
            let d = &mut delta[i * n..(i + 1) * n];
            m.difference_into(&path.nodes[i], &path.nodes[i + 1], d);
            midpoint_into(&path.nodes[i], d, &mut mid);
            m.metric_into(&mid, &mut g[i * n * n..(i + 1) * n * n]);
            if partials {
                m.metric_partials_into(&mid, &mut dg[i * n * n * n..(i + 1) * n * n * n]);
            }
        }
        Ok(Self { n, delta, g, dg })
    }

    fn delta(&self, i: usize) -> &[f64] {
        &self.delta[i * self.n..(i + 1) * self.n]
    }

    fn g(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.g[i * nn..(i + 1) * nn]
    }

    fn sq(&self, i: usize) -> f64 {
        linalg::bilinear(self.g(i), self.n, self.delta(i), self.delta(i))
    }

    /// (g Δ, [Δᵀ ∂ₖg Δ]ₖ) for segment i.
    fn terms(&self, i: usize, g_delta: &mut [f64], quad: &mut [f64]) {
        let n = self.n;
        let d = self.delta(i);
        linalg::mat_vec(self.g(i), n, d, g_delta);
        let base = i * n * n * n;
        for (k, qk) in quad.iter_mut().enumerate().take(n) {
            *qk = linalg::bilinear(&self.dg[base + k * n * n..base + (k + 1) * n * n], n, d, d);
        }
    }
}

/// Discrete energy ½K Σᵢ ⟨Δᵢ, Δᵢ⟩ with the metric taken at segment midpoints.
pub fn energy(path: &DiscretePath, m: &ChartManifold) -> Result<f64> {
    let seg = Segments::build(path, m, false)?;
    let k = path.k();
    Ok(0.5 * k as f64 * (0..k).map(|i| seg.sq(i)).sum::<f64>())
}

/// Σᵢ |Δᵢ|_{g(mᵢ)}.
pub fn length(path: &DiscretePath, m: &ChartManifold) -> Result<f64> {
    let seg = Segments::build(path, m, false)?;
    Ok((0..path.k()).map(|i| seg.sq(i).max(0.0).sqrt()).sum())
}

fn check_inside(path: &DiscretePath, b: &Barrier) -> Result<Vec<f64>> {
    let phi: Vec<f64> = path.nodes().iter().map(|x| b.phi(x)).collect();
    for (node, &v) in phi.iter().enumerate() {
        if !(v > 0.0) {
            return Err(GeodomError::BoundaryViolation { node, phi: v });
        }
    }
    Ok(phi)
}

/// Verifies φᵢ + φᵢ₊₁ > L·|Δᵢ| for every segment when the barrier declares a
/// chart Lipschitz constant L; then no segment can leave D.
pub fn check_segments(path: &DiscretePath, b: &Barrier) -> Result<()> {
    let Some(lip) = b.lipschitz() else {
        return Ok(());
    };
    let m = b.manifold();
    let mut d = vec![0.0; path.dim()];
    for (i, w) in path.nodes().windows(2).enumerate() {
        m.difference_into(&w[0], &w[1], &mut d);
        let clearance = lip * linalg::norm(&d);
        let phi_sum = b.phi(&w[0]) + b.phi(&w[1]);
        if !(phi_sum > clearance) {
            return Err(GeodomError::SegmentCrossing {
                segment: i,
                phi_sum,
                clearance,
            });
        }
    }
    Ok(())
}

/// f_ε = f + Σⱼ ε/φ(xⱼ)²/K with its exact interior-node gradient. Metric
/// derivatives come from the metric field (analytic or central differences).
pub fn penalized_energy(path: &DiscretePath, b: &Barrier, eps: f64) -> Result<PathEval> {
    let m = b.manifold();
    let seg = Segments::build(path, m, true)?;
    let phi = check_inside(path, b)?;
    let n = path.dim();
    let k = path.k();
    let kf = k as f64;

    let f = 0.5 * kf * (0..k).map(|i| seg.sq(i)).sum::<f64>();
    let penalty = phi.iter().map(|v| eps / (v * v)).sum::<f64>() / kf;

    let mut grad = vec![vec![0.0; n]; k - 1];
    let mut g_delta = vec![0.0; n];
    let mut quad = vec![0.0; n];
    for i in 0..k {
        seg.terms(i, &mut g_delta, &mut quad);
        // segment i touches interior nodes i (as start) and i + 1 (as end)
        if i >= 1 {
            let gr = &mut grad[i - 1];
            for c in 0..n {
                gr[c] += -kf * g_delta[c] + 0.25 * kf * quad[c];
            }
        }
        if i < k - 1 {
            let gr = &mut grad[i];
            for c in 0..n {
                gr[c] += kf * g_delta[c] + 0.25 * kf * quad[c];
            }
        }
    }
    if eps != 0.0 {
        let mut dphi = vec![0.0; n];
        for j in 1..k {
            b.field().gradient(&path.nodes[j], &mut dphi);
            let scale = -2.0 * eps / (kf * phi[j].powi(3));
            for c in 0..n {
                grad[j - 1][c] += scale * dphi[c];
            }
        }
    }

    let e_eps = (0..k)
        .map(|i| {
            let pen = 0.5 * (eps / (phi[i] * phi[i]) + eps / (phi[i + 1] * phi[i + 1]));
            0.5 * kf * kf * seg.sq(i) - pen
        })
        .collect();
    let lambda = phi.iter().map(|v| 2.0 * eps / v.powi(3)).collect();
    let min_phi = phi.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PathEval {
        f,
        penalty,
        grad,
        e_eps,
        lambda,
        min_phi,
    })
}

/// Largest dual norm ‖dFⱼ‖_{g(xⱼ)⁻¹} of the interior-node gradient.
pub fn grad_dual_norm(path: &DiscretePath, m: &ChartManifold, grad: &[Vec<f64>]) -> Result<f64> {
    let n = path.dim();
    let mut g = vec![0.0; n * n];
    let mut worst: f64 = 0.0;
    for (j, dfj) in grad.iter().enumerate() {
        let x = &path.nodes[j + 1];
        m.metric_into(x, &mut g);
        let sol = linalg::spd_solve(&g, n, dfj)
            .ok_or_else(|| GeodomError::NotPositiveDefinite { point: x.clone() })?;
        worst = worst.max(linalg::dot(&sol, dfj).max(0.0).sqrt());
    }
    Ok(worst)
}

/// maxⱼ |D_s ẋ + λ_ε ∇φ|_g at interior nodes, discretized as K times the
/// dual norm of the node gradient of f_ε. Zero exactly at critical points of
/// the discrete functional.
pub fn el_residual(path: &DiscretePath, b: &Barrier, eps: f64) -> Result<f64> {
    if path.k() < 4 {
        return Err(GeodomError::InvalidArgument(format!(
            "el_residual needs K >= 4, got {}",
            path.k()
        )));
    }
    let ev = penalized_energy(path, b, eps)?;
    Ok(path.k() as f64 * grad_dual_norm(path, b.manifold(), &ev.grad)?)
}

/// Σⱼ ⟨aⱼ, bⱼ⟩ over node-indexed vectors.
pub fn dot_nested(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(u, v)| linalg::dot(u, v)).sum()
}

/// |ẋ|_g at each node, averaging the adjacent segment speeds.
pub fn node_speeds(path: &DiscretePath, m: &ChartManifold) -> Result<Vec<f64>> {
    let seg = Segments::build(path, m, false)?;
    let k = path.k();
    let kf = k as f64;
    let seg_speed: Vec<f64> = (0..k).map(|i| kf * seg.sq(i).max(0.0).sqrt()).collect();
    Ok((0..=k)
        .map(|j| match j {
            0 => seg_speed[0],
            j if j == k => seg_speed[k - 1],
            j => 0.5 * (seg_speed[j - 1] + seg_speed[j]),
        })
        .collect())
}

/// Writes one row per node: s, coordinates, φ, |ẋ|_g.
pub fn write_csv<W: Write>(path: &DiscretePath, b: &Barrier, out: W) -> Result<()> {
    let speeds = node_speeds(path, b.manifold())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["s".to_string()];
    header.extend((0..path.dim()).map(|i| format!("x{i}")));
    header.push("phi".into());
    header.push("speed".into());
    w.write_record(&header)?;
    let k = path.k() as f64;
    for (j, x) in path.nodes().iter().enumerate() {
        let mut row = vec![format!("{}", j as f64 / k)];
        row.extend(x.iter().map(|v| format!("{v}")));
        row.push(format!("{}", b.phi(x)));
        row.push(format!("{}", speeds[j]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON form of a path with its winding numbers and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub nodes: Vec<Point>,
    pub winding: Vec<i64>,
    pub energy: f64,
    pub length: f64,
    pub min_phi: f64,
}

impl PathRecord {
    pub fn new(path: &DiscretePath, b: &Barrier) -> Result<Self> {
        let m = b.manifold();
        Ok(Self {
            nodes: path.nodes().to_vec(),
            winding: path.winding(m),
            energy: energy(path, m)?,
            length: length(path, m)?,
            min_phi: path.nodes().iter().map(|x| b.phi(x)).fold(f64::INFINITY, f64::min),
        })
    }
}
