//! Monte-Carlo diagnostics for the integrability hypotheses on `G`.
//!
//! The density formulas need `D_H G/|D_H G|²_H` to be Sobolev; a practical
//! proxy is that `|D_H G|^{-q}` and `(div_μ ψ)²` have finite moments. Finite
//! sample means never diverge, so each moment also carries a Hill estimate
//! of the tail index of the summand: a moment is reported as diverging when
//! the tail index cannot be separated from 1 at three standard errors.

use serde::Serialize;

use crate::gauss_model::GaussianModel;
use crate::stats::{sample_estimate, Estimate};

use super::field::{KernelField, DEFAULT_GRADIENT_FLOOR};
use super::FunctionalOracle;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    /// Exponents `a` for `E|∇G|^a`.
    pub grad_exponents: Vec<f64>,
    /// Exponents `q` for `E|∇G|^{-q}`. `q = 2` is always included.
    pub inverse_exponents: Vec<f64>,
    pub floor: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            grad_exponents: vec![2.0, 4.0],
            inverse_exponents: vec![2.0],
            floor: DEFAULT_GRADIENT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub label: String,
    pub exponent: f64,
    pub estimate: Estimate,
    /// Hill estimate of the tail index of the summand; infinite when the
    /// summand is bounded with a flat top.
    pub tail_index: f64,
    pub diverging: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub functional: String,
    pub n: usize,
    pub seed: u64,
    pub excluded_fraction: f64,
    pub grad_moments: Vec<MomentEstimate>,
    pub inverse_moments: Vec<MomentEstimate>,
    pub kernel_second_moment: MomentEstimate,
    /// Set when `E|∇G|^{-2}` or `E(div_μ ψ)²` looks infinite.
    pub variance_unreliable: bool,
}

/// Hill estimator of the tail index on the top `k` order statistics of `|values|`.
pub fn hill_tail_index(values: &[f64], k: usize) -> f64 {
    let mut abs: Vec<f64> = values
        .iter()
        .map(|v| v.abs())
        .filter(|v| v.is_finite())
        .collect();
    if abs.len() <= k + 1 || k == 0 {
        return f64::INFINITY;
    }
    let split = abs.len() - k - 1;
    abs.select_nth_unstable_by(split, |a, b| a.total_cmp(b));
    let threshold = abs[split];
    if threshold <= 0.0 {
        return f64::INFINITY;
    }
    let mean_log: f64 = abs[split + 1..]
        .iter()
        .map(|v| (v / threshold).ln())
        .sum::<f64>()
        / k as f64;
    if mean_log <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / mean_log
    }
}

fn moment(label: &str, exponent: f64, values: &[f64]) -> MomentEstimate {
    let n = values.len();
    let k = ((n as f64).sqrt() as usize).max(10);
    let non_finite = values.iter().any(|v| !v.is_finite());
    let estimate = sample_estimate(values);
    let tail_index = hill_tail_index(values, k);
    let diverging = non_finite
        || !estimate.value.is_finite()
        || tail_index * (1.0 - 3.0 / (k as f64).sqrt()) <= 1.0;
    MomentEstimate {
        label: label.to_string(),
        exponent,
        estimate,
        tail_index,
        diverging,
    }
}

/// The heavy-tail flag from per-sample gradient norms and kernel
/// divergences (`NaN` marks excluded samples).
pub(crate) fn variance_unreliable(norms: &[f64], kernel_div: &[f64]) -> bool {
    let inv: Vec<f64> = norms.iter().map(|g| g.powi(-2)).collect();
    let sq: Vec<f64> = kernel_div
        .iter()
        .filter(|v| !v.is_nan())
        .map(|v| v * v)
        .collect();
    moment("", -2.0, &inv).diverging || moment("", 2.0, &sq).diverging
}

pub fn hypothesis_diagnostics(
    g: &FunctionalOracle,
    model: &GaussianModel,
    n: usize,
    seed: u64,
    config: &DiagnosticsConfig,
) -> HypothesisReport {
    let d = model.dim();
    let kernel = KernelField::new(g.clone()).with_floor(config.floor);
    // per sample: (|∇G|, div ψ or NaN when excluded)
    let chunks = model.map_chunks(n, seed, |_, pts| {
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        pts.chunks_exact(d)
            .map(|xi| match kernel.evaluate(xi, &mut grad, &mut hess) {
                Some(k) => (k.grad_norm_sq.sqrt(), k.divergence),
                None => (grad.iter().map(|v| v * v).sum::<f64>().sqrt(), f64::NAN),
            })
            .collect::<Vec<_>>()
    });
    let pairs: Vec<(f64, f64)> = chunks.into_iter().flatten().collect();
    let norms: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let excluded = pairs.iter().filter(|p| p.1.is_nan()).count();

    let grad_moments = config
        .grad_exponents
        .iter()
        .map(|&a| {
            let v: Vec<f64> = norms.iter().map(|g| g.powf(a)).collect();
            moment(&format!("E|grad G|^{a}"), a, &v)
        })
        .collect();

    let mut inverse = config.inverse_exponents.clone();
    if !inverse.contains(&2.0) {
        inverse.insert(0, 2.0);
    }
    let inverse_moments: Vec<MomentEstimate> = inverse
        .iter()
        .map(|&q| {
            let v: Vec<f64> = norms.iter().map(|g| g.powf(-q)).collect();
            moment(&format!("E|grad G|^-{q}"), -q, &v)
        })
        .collect();

    let div_sq: Vec<f64> = pairs
        .iter()
        .filter(|p| !p.1.is_nan())
        .map(|p| p.1 * p.1)
        .collect();
    let kernel_second_moment = moment("E(div psi)^2", 2.0, &div_sq);

    let inverse_two_diverges = inverse_moments
        .iter()
        .find(|m| m.exponent == -2.0)
        .is_some_and(|m| m.diverging);
    HypothesisReport {
        functional: g.describe(),
        n,
        seed,
        excluded_fraction: excluded as f64 / n as f64,
        variance_unreliable: inverse_two_diverges || kernel_second_moment.diverging,
        grad_moments,
        inverse_moments,
        kernel_second_moment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{Coordinate, Norm2};
    use crate::gauss_model::{build_model, ModelDescriptor};

    #[test]
    fn hill_on_pareto() {
        // deterministic Pareto(α = 2) quantiles
        let n = 100_000;
        let v: Vec<f64> = (1..=n)
            .map(|i| (1.0 - (i as f64 - 0.5) / n as f64).powf(-0.5))
            .collect();
        let a = hill_tail_index(&v, 300);
        assert!((a - 2.0).abs() < 0.1, "{a}");
        assert_eq!(hill_tail_index(&[1.0; 100], 10), f64::INFINITY);
    }

    #[test]
    fn coordinate_moments_are_one() {
        let m = build_model(&ModelDescriptor::IidGaussian { dim: 3 }).unwrap();
        let cfg = DiagnosticsConfig {
            inverse_exponents: vec![8.0],
            ..Default::default()
        };
        let r = hypothesis_diagnostics(
            &FunctionalOracle::new(Coordinate::new(1)),
            &m,
            5000,
            1,
            &cfg,
        );
        let q8 = r
            .inverse_moments
            .iter()
            .find(|m| m.exponent == -8.0)
            .unwrap();
        assert_eq!(q8.estimate.value, 1.0);
        assert!(!q8.diverging);
        assert!(!r.variance_unreliable);
        assert_eq!(r.excluded_fraction, 0.0);
    }

    #[test]
    fn norm2_d2_is_flagged() {
        let m = build_model(&ModelDescriptor::IidGaussian { dim: 2 }).unwrap();
        let r = hypothesis_diagnostics(
            &FunctionalOracle::new(Norm2),
            &m,
            200_000,
            3,
            &DiagnosticsConfig::default(),
        );
        assert!(r.inverse_moments[0].diverging);
        assert!(r.variance_unreliable);
    }
}
