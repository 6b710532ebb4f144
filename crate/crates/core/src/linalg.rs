//! Row-major dense helpers for the small (n ≤ 4 in practice) matrices that
//! appear in inner loops, where allocating nalgebra matrices per node would
//! dominate the cost.

/// In-place Cholesky factorisation A = L Lᵀ of a row-major n×n matrix. The
/// lower triangle of `a` is overwritten with L. Returns `false` if a pivot is
/// not strictly positive.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solves L Lᵀ x = b given the factor from [`cholesky_in_place`]; `b` is
/// overwritten with x.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves A x = b for SPD A without modifying A. Returns `None` when the
/// factorisation fails.
pub fn spd_solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut l = a.to_vec();
    if !cholesky_in_place(&mut l, n) {
        return None;
    }
    let mut x = b.to_vec();
    cholesky_solve(&l, n, &mut x);
    Some(x)
}

/// uᵀ A v.
#[inline]
pub fn bilinear(a: &[f64], n: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[i * n + j] * v[j];
        }
        s += u[i] * row;
    }
    s
}

#[inline]
pub fn mat_vec(a: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = (0..n).map(|j| a[i * n + j] * v[j]).sum();
    }
}

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Largest |A_ij − A_ji|.
pub fn asymmetry(a: &[f64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}
