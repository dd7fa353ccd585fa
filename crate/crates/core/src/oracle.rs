//! Closed-form reference values used by the self-test battery.

use std::f64::consts::PI;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `ln Γ(k/2)` for integer `k ≥ 1`.
pub fn ln_gamma_half(k: usize) -> f64 {
    assert!(k >= 1);
    let mut v = if k.is_multiple_of(2) {
        0.0
    } else {
        0.5 * PI.ln()
    };
    let mut j = if k.is_multiple_of(2) { 2 } else { 1 };
    while j + 2 <= k {
        v += (j as f64 / 2.0).ln();
        j += 2;
    }
    v
}

/// Density of `χ²_k` at `x`.
pub fn chi_square_pdf(k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let h = 0.5 * k as f64;
    ((h - 1.0) * x.ln() - 0.5 * x - h * 2f64.ln() - ln_gamma_half(k)).exp()
}

/// `P(χ²_k < x)` by the series of the regularized lower incomplete gamma.
pub fn chi_square_cdf(k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * k as f64;
    let z = 0.5 * x;
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..10_000 {
        term *= z / (a + n as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    (a * z.ln() - z - ln_gamma_half(k) + sum.ln()).exp()
}

/// `Var(W_1)` under the `d`-term Karhunen–Loève truncation of Brownian motion.
pub fn kl_endpoint_variance(d: usize) -> f64 {
    (1..=d)
        .map(|k| {
            let a = (k as f64 - 0.5) * PI;
            let e = 2f64.sqrt() * a.sin();
            e * e / (a * a)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_values() {
        assert!((chi_square_pdf(2, 1.0) - 0.5 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((chi_square_pdf(3, 1.0) - normal_pdf(1.0)).abs() < 1e-15);
        // P(χ²_2 < x) = 1 − e^{−x/2}
        assert!((chi_square_cdf(2, 3.0) - (1.0 - (-1.5f64).exp())).abs() < 1e-14);
        assert!((chi_square_cdf(5, 5.0) - 0.584119813004492).abs() < 1e-12);
    }

    #[test]
    fn kl_variance_tends_to_one() {
        assert!((kl_endpoint_variance(1) - 8.0 / (PI * PI)).abs() < 1e-15);
        assert!((1.0 - kl_endpoint_variance(10_000)).abs() < 1e-4);
    }
}
