#![allow(dead_code)]

use std::f64::consts::PI;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;

use geodom::domain::Barrier;
use geodom::gallery;
use geodom::manifold::Point;
use geodom::pathspace::{self, DiscretePath};
use geodom::problem::Problem;
use geodom::solver::{self, PathSeed};

pub fn gallery_problem(name: &str) -> Problem {
    gallery::load(name).unwrap().build().unwrap()
}

pub fn gallery_problems() -> Vec<Problem> {
    gallery::names().map(gallery_problem).collect()
}

/// Every barrier a gallery problem solves on, including Jacobi barriers.
pub fn gallery_barriers() -> Vec<(String, Barrier, Point, Point, Vec<i64>)> {
    let mut out = Vec::new();
    for p in gallery_problems() {
        let d = &p.def;
        let (a, b, w) = (d.endpoints.p.clone(), d.endpoints.q.clone(), d.init.winding.clone());
        out.push((d.name.clone(), p.barrier.clone(), a.clone(), b.clone(), w.clone()));
        if let Some(jb) = p.lagrangian.as_ref().and_then(|l| l.jacobi_barrier()) {
            out.push((format!("{} (jacobi)", d.name), jb, a, b, w));
        }
    }
    out
}

/// The admissible seed path with each interior node jittered inside the
/// domain by up to a tenth of its barrier value.
pub fn random_path<R: Rng>(b: &Barrier, p: &[f64], q: &[f64], winding: &[i64], k: usize, rng: &mut R) -> DiscretePath {
    let seed = solver::seed_path(p, q, b, k, &PathSeed::winding(winding.to_vec())).expect("admissible seed");
    let mut path = seed.clone();
    for i in 1..k {
        let x = &seed.nodes()[i];
        let mut r = 0.1 * b.phi(x).min(1.0);
        for _ in 0..30 {
            let y: Point = x.iter().map(|c| c + rng.gen_range(-r..r)).collect();
            let mut interior: Vec<Point> = path.nodes()[1..k].to_vec();
            interior[i - 1] = y;
            let trial = path.with_interior(&interior).unwrap();
            if pathspace::penalized_energy(&trial, b, 0.1).is_ok() && pathspace::check_segments(&trial, b).is_ok() {
                path = trial;
                break;
            }
            r *= 0.5;
        }
    }
    path
}

/// Shortest path on a graph over the cylinder's universal cover: grid
/// nodes inside the domain, 16-neighbour stencil, Euclidean edge lengths,
/// edges dropped when any of their sample points leaves the domain.
pub fn cover_dijkstra(b: &Barrier, p: &[f64], q_lifted: &[f64], x_range: (f64, f64), y_range: (f64, f64), n: usize) -> f64 {
    let dx = (x_range.1 - x_range.0) / (n - 1) as f64;
    let dy = (y_range.1 - y_range.0) / (n - 1) as f64;
    let coord = |i: usize, j: usize| [x_range.0 + i as f64 * dx, y_range.0 + j as f64 * dy];
    let wrap = |x: [f64; 2]| vec![x[0].rem_euclid(2.0 * PI), x[1]];
    let inside = |x: [f64; 2]| b.phi(&wrap(x)) > 0.0;

    let mut g = UnGraph::<(), f64>::new_undirected();
    let mut ids = vec![None; n * n];
    for i in 0..n {
        for j in 0..n {
            if inside(coord(i, j)) {
                ids[i * n + j] = Some(g.add_node(()));
            }
        }
    }
    let stencil: Vec<(i64, i64)> = (-2i64..=2)
        .flat_map(|a| (-2i64..=2).map(move |c| (a, c)))
        .filter(|&(a, c)| (a, c) > (0, 0) && gcd(a.unsigned_abs(), c.unsigned_abs()) == 1)
        .collect();
    for i in 0..n {
        for j in 0..n {
            let Some(u) = ids[i * n + j] else { continue };
            let a = coord(i, j);
            for &(di, dj) in &stencil {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                    continue;
                }
                let Some(v) = ids[ii as usize * n + jj as usize] else { continue };
                let c = coord(ii as usize, jj as usize);
                let clear = (1..8).all(|t| {
                    let s = t as f64 / 8.0;
                    inside([a[0] + s * (c[0] - a[0]), a[1] + s * (c[1] - a[1])])
                });
                if clear {
                    g.add_edge(u, v, ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2)).sqrt());
                }
            }
        }
    }
    let nearest = |x: &[f64]| -> (NodeIndex, f64) {
        let i = ((x[0] - x_range.0) / dx).round() as usize;
        let j = ((x[1] - y_range.0) / dy).round() as usize;
        let c = coord(i, j);
        (ids[i * n + j].expect("endpoint on an inside node"), (c[0] - x[0]).hypot(c[1] - x[1]))
    };
    let (s, ds) = nearest(p);
    let (t, dt) = nearest(q_lifted);
    let dist = dijkstra(&g, s, Some(t), |e| *e.weight());
    dist[&t] + ds + dt
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// RK4 for x'' = acc(x) from (x0, v0) over [0, t] in `steps` steps.
pub fn rk4<F: Fn(&[f64]) -> Vec<f64>>(acc: &F, x0: &[f64], v0: &[f64], t: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let h = t / steps as f64;
    let (mut x, mut v) = (x0.to_vec(), v0.to_vec());
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * q).collect() };
    for _ in 0..steps {
        let k1x = v.clone();
        let k1v = acc(&x);
        let k2x = axpy(&v, 0.5 * h, &k1v);
        let k2v = acc(&axpy(&x, 0.5 * h, &k1x));
        let k3x = axpy(&v, 0.5 * h, &k2v);
        let k3v = acc(&axpy(&x, 0.5 * h, &k2x));
        let k4x = axpy(&v, h, &k3v);
        let k4v = acc(&axpy(&x, h, &k3x));
        for c in 0..x.len() {
            x[c] += h / 6.0 * (k1x[c] + 2.0 * k2x[c] + 2.0 * k3x[c] + k4x[c]);
            v[c] += h / 6.0 * (k1v[c] + 2.0 * k2v[c] + 2.0 * k3v[c] + k4v[c]);
        }
    }
    (x, v)
}

/// Two-point shooting for x'' = −x at energy e: Newton over the launch
/// angle and the travel time. Returns (angle, time, launch speed).
pub fn shoot_harmonic(p: &[f64], q: &[f64], e: f64, guess: (f64, f64)) -> (f64, f64, f64) {
    let acc = |x: &[f64]| x.iter().map(|c| -c).collect::<Vec<f64>>();
    let speed = (2.0 * (e - 0.5 * (p[0] * p[0] + p[1] * p[1]))).sqrt();
    let miss = |th: f64, t: f64| -> [f64; 2] {
        let (x, _) = rk4(&acc, p, &[speed * th.cos(), speed * th.sin()], t, 4000);
        [x[0] - q[0], x[1] - q[1]]
    };
    let (mut th, mut t) = guess;
    for _ in 0..50 {
        let r = miss(th, t);
        if r[0].hypot(r[1]) < 1e-13 {
            break;
        }
        let h = 1e-7;
        let a = miss(th + h, t);
        let b = miss(th, t + h);
        let j = [[(a[0] - r[0]) / h, (b[0] - r[0]) / h], [(a[1] - r[1]) / h, (b[1] - r[1]) / h]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        th -= (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        t -= (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
    }
    (th, t, speed)
}

/// Midpoint height of the minimizer of ∫ ½|x'|² + ε/y² between (x0, 1) and
/// (x1, 1): shooting on y'' = −2ε/y³ with bisection on y'(0).
pub fn half_plane_midpoint(eps: f64) -> f64 {
    let acc = |y: &[f64]| vec![-2.0 * eps / y[0].powi(3)];
    let end = |v: f64| rk4(&acc, &[1.0], &[v], 1.0, 2000).0[0];
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if end(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    rk4(&acc, &[1.0], &[0.5 * (lo + hi)], 0.5, 1000).0[0]
}
