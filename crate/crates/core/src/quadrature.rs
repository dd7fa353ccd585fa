//! Deterministic quadrature on spheres and hyperplanes under the standard
//! Gaussian weight.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes per axis unless the tensor grid would exceed [`MAX_GRID_POINTS`].
pub const DEFAULT_NODES: usize = 64;
pub const MAX_GRID_POINTS: usize = 50_000_000;

/// Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = mid - half * z;
        x[n - 1 - i] = mid + half * z;
        w[i] = half * wi;
        w[n - 1 - i] = half * wi;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))`.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (z * p1 - p0) / (z * z - 1.0))
}

/// Gauss–Hermite rule for `E[f(X)]`, `X ~ N(0, 1)`. Weights sum to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    // physicists' rule with orthonormal recurrence, then rescaled
    let pim4 = PI.powf(-0.25);
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * t[0],
            3 => 1.91 * z - 0.91 * t[1],
            _ => 2.0 * z - t[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-14 {
                break;
            }
        }
        t[i] = z;
        t[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let s: f64 = w.iter().sum();
    let x = t.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let w = w.iter().map(|v| v / s).collect();
    (x, w)
}

/// Largest node count `≤ DEFAULT_NODES` whose `axes`-fold tensor grid fits
/// under [`MAX_GRID_POINTS`].
pub fn nodes_per_axis(axes: usize) -> usize {
    if axes == 0 {
        return 1;
    }
    let mut m = DEFAULT_NODES;
    while m > 2 && (m as f64).powi(axes as i32) > MAX_GRID_POINTS as f64 {
        m -= 1;
    }
    m
}

/// Iterate a tensor grid given per-axis rules, calling `f(point, weight)`.
fn tensor<F: FnMut(&[f64], f64)>(rules: &[(Vec<f64>, Vec<f64>)], mut f: F) {
    let axes = rules.len();
    let mut idx = vec![0usize; axes];
    let mut point = vec![0.0; axes];
    loop {
        let mut w = 1.0;
        for a in 0..axes {
            point[a] = rules[a].0[idx[a]];
            w *= rules[a].1[idx[a]];
        }
        f(&point, w);
        let mut a = 0;
        loop {
            if a == axes {
                return;
            }
            idx[a] += 1;
            if idx[a] < rules[a].0.len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Area of the unit sphere `S^{d−1}` in `ℝ^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * (0.5 * d as f64 * PI.ln() - crate::oracle::ln_gamma_half(d)).exp()
}

/// `∫_{|ξ|² = r} φ γ_d / |∇|ξ|²| dH^{d−1}` by tensor Gauss–Legendre on
/// hyperspherical angles. Zero for `r ≤ 0`.
pub fn sphere_integral<F: Fn(&[f64]) -> f64>(
    d: usize,
    r: f64,
    nodes: usize,
    phi: F,
) -> Result<f64> {
    if d == 0 {
        return Err(Error::Argument("sphere quadrature needs d ≥ 1".into()));
    }
    if r <= 0.0 {
        return Ok(0.0);
    }
    let radius = r.sqrt();
    // γ_d(R) R^{d−1} / (2R)
    let scale = (-(0.5 * d as f64) * (2.0 * PI).ln() - 0.5 * r).exp() * radius.powi(d as i32 - 1)
        / (2.0 * radius);
    if d == 1 {
        return Ok(scale * (phi(&[radius]) + phi(&[-radius])));
    }
    let mut rules = Vec::with_capacity(d - 1);
    for _ in 0..d - 2 {
        rules.push(gauss_legendre(nodes, 0.0, PI));
    }
    rules.push(gauss_legendre(nodes, 0.0, 2.0 * PI));
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    tensor(&rules, |angles, w| {
        // x_1 = cos θ_1, x_2 = sin θ_1 cos θ_2, ..., x_d = sin θ_1 ⋯ sin θ_{d−1}
        let mut s = 1.0;
        let mut jac = 1.0;
        for (i, &a) in angles.iter().enumerate() {
            x[i] = radius * s * a.cos();
            if i + 1 < angles.len() {
                jac *= a.sin().powi((d - 2 - i) as i32);
            }
            s *= a.sin();
        }
        x[d - 1] = radius * s;
        total += w * jac * phi(&x);
    });
    Ok(scale * total)
}

/// Orthonormal basis of the complement of `w` in `ℝ^d`.
pub fn complement_basis(w: &[f64]) -> Vec<Vec<f64>> {
    let d = w.len();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut basis: Vec<Vec<f64>> = vec![w.iter().map(|v| v / norm).collect()];
    for e in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis.remove(0);
    basis
}

/// `∫_{⟨w,ξ⟩ = r} φ γ_d / |w| dH^{d−1}` by Gauss–Hermite on the `d − 1`
/// free directions. `w` is zero-padded to `d`.
pub fn hyperplane_integral<F: Fn(&[f64]) -> f64>(
    d: usize,
    weights: &[f64],
    r: f64,
    nodes: usize,
    phi: F,
) -> Result<f64> {
    if weights.len() > d {
        return Err(Error::Argument(format!(
            "hyperplane normal has {} entries for dimension {d}",
            weights.len()
        )));
    }
    let mut w = weights.to_vec();
    w.resize(d, 0.0);
    let norm_sq: f64 = w.iter().map(|v| v * v).sum();
    if !(norm_sq > 0.0) {
        return Err(Error::Argument("hyperplane normal is zero".into()));
    }
    let norm = norm_sq.sqrt();
    let s = r / norm;
    let scale = (-0.5 * s * s).exp() / (2.0 * PI).sqrt() / norm;
    let base: Vec<f64> = w.iter().map(|v| v * r / norm_sq).collect();
    if d == 1 {
        return Ok(scale * phi(&base));
    }
    let basis = complement_basis(&w);
    let rule = gauss_hermite(nodes);
    let rules = vec![rule; d - 1];
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    tensor(&rules, |u, weight| {
        x.copy_from_slice(&base);
        for (uj, b) in u.iter().zip(&basis) {
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi += uj * bi;
            }
        }
        total += weight * phi(&x);
    });
    Ok(scale * total)
}
