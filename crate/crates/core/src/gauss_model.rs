//! Truncated centered Gaussian measures in whitened coordinates.
//!
//! A model of dimension `d` carries the covariance spectrum `λ_1, …, λ_d`
//! in a fixed eigenbasis `e_k`. A point is stored through its whitened
//! coordinates `ξ`, with ambient point `x = Σ √λ_k ξ_k e_k`. In these
//! coordinates the measure is standard Gaussian, the Cameron–Martin basis is
//! `v_k = √λ_k e_k`, `D_k = ∂/∂ξ_k` and `v̂_k(x) = ⟨x, v_k⟩/λ_k = ξ_k`.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Which builtin family a model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    IidGaussian,
    KlBrownian,
    Spectrum,
}

/// How to build a [`GaussianModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelDescriptor {
    IidGaussian { dim: usize },
    KlBrownian { dim: usize },
    Spectrum { eigenvalues: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianModel {
    dim: usize,
    eigenvalues: Vec<f64>,
    label: String,
    family: ModelFamily,
    kl_eval_times: Option<Vec<f64>>,
}

/// A point given by its whitened coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub xi: Vec<f64>,
}

impl Point {
    pub fn new(xi: Vec<f64>) -> Self {
        Self { xi }
    }

    pub fn origin(dim: usize) -> Self {
        Self { xi: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }
}

/// Element of the Cameron–Martin space, as coefficients on `{v_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HVector {
    pub coeffs: Vec<f64>,
}

impl HVector {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn dot(&self, other: &HVector) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// `n` points sampled from the model, row-major `n × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub dim: usize,
    pub points: Vec<f64>,
    pub seed: u64,
    /// Substream key of each chunk, in chunk order.
    pub substream_ids: Vec<u64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// Eigenvalue `λ_k = 1/((k − 1/2)² π²)` of the Brownian covariance on [0, 1].
pub fn kl_brownian_eigenvalue(k: usize) -> f64 {
    let a = (k as f64 - 0.5) * PI;
    1.0 / (a * a)
}

/// Eigenfunction `e_k(t) = √2 sin((k − 1/2) π t)`.
pub fn kl_brownian_eigenfunction(k: usize, t: f64) -> f64 {
    SQRT_2 * ((k as f64 - 0.5) * PI * t).sin()
}

pub fn build_model(desc: &ModelDescriptor) -> Result<GaussianModel> {
    match desc {
        ModelDescriptor::IidGaussian { dim } => {
            check_dim(*dim)?;
            Ok(GaussianModel {
                dim: *dim,
                eigenvalues: vec![1.0; *dim],
                label: format!("iid_gaussian(d={dim})"),
                family: ModelFamily::IidGaussian,
                kl_eval_times: None,
            })
        }
        ModelDescriptor::KlBrownian { dim } => {
            check_dim(*dim)?;
            Ok(GaussianModel {
                dim: *dim,
                eigenvalues: (1..=*dim).map(kl_brownian_eigenvalue).collect(),
                label: format!("kl_brownian(d={dim})"),
                family: ModelFamily::KlBrownian,
                kl_eval_times: Some(vec![1.0]),
            })
        }
        ModelDescriptor::Spectrum { eigenvalues } => {
            check_dim(eigenvalues.len())?;
            for (k, &l) in eigenvalues.iter().enumerate() {
                if !(l.is_finite() && l > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "eigenvalue {} must be positive and finite, got {l}",
                        k + 1
                    )));
                }
            }
            Ok(GaussianModel {
                dim: eigenvalues.len(),
                eigenvalues: eigenvalues.clone(),
                label: format!("spectrum(d={})", eigenvalues.len()),
                family: ModelFamily::Spectrum,
                kl_eval_times: None,
            })
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidModel("dimension must be positive".into()));
    }
    Ok(())
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn kl_eval_times(&self) -> Option<&[f64]> {
        self.kl_eval_times.as_deref()
    }

    pub fn with_kl_eval_times(mut self, times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidModel(
                "kl_eval_times must lie in [0, 1]".into(),
            ));
        }
        self.kl_eval_times = Some(times);
        Ok(self)
    }

    /// Trace of the truncated covariance, `Σ λ_k`.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `v̂_k(x)` for 1-based `k`. Equals the whitened coordinate `ξ_k`.
    pub fn vhat(&self, k: usize, p: &Point) -> Result<f64> {
        if k == 0 || k > self.dim {
            return Err(Error::IndexOutOfRange {
                index: k,
                dim: self.dim,
            });
        }
        if p.dim() != self.dim {
            return Err(Error::Argument(format!(
                "point has dimension {}, model has {}",
                p.dim(),
                self.dim
            )));
        }
        let lambda = self.eigenvalues[k - 1];
        let x_k = self.ambient_coefficient(k, p.xi[k - 1]);
        // ⟨x, v_k⟩ = √λ_k x_k with x_k the e_k-coefficient
        Ok(lambda.sqrt() * x_k / lambda)
    }

    /// Coefficient of the ambient point on `e_k` given `ξ_k`.
    pub fn ambient_coefficient(&self, k: usize, xi_k: f64) -> f64 {
        self.eigenvalues[k - 1].sqrt() * xi_k
    }

    /// Ambient coefficients `√λ_k ξ_k` for all `k`.
    pub fn ambient(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .zip(&self.eigenvalues)
            .map(|(x, l)| l.sqrt() * x)
            .collect()
    }

    /// Path value `x(t)` of a Karhunen–Loève instance.
    pub fn path_value(&self, xi: &[f64], t: f64) -> Result<f64> {
        if self.family != ModelFamily::KlBrownian {
            return Err(Error::Argument(format!(
                "{} has no path rendering",
                self.label
            )));
        }
        Ok(self
            .path_weights(t)
            .iter()
            .zip(xi)
            .map(|(w, x)| w * x)
            .sum())
    }

    /// Weights `√λ_k e_k(t)` with `x(t) = Σ_k w_k ξ_k`.
    pub fn path_weights(&self, t: f64) -> Vec<f64> {
        (1..=self.dim)
            .map(|k| self.eigenvalues[k - 1].sqrt() * kl_brownian_eigenfunction(k, t))
            .collect()
    }

    /// Render the path at the configured evaluation times.
    pub fn render_path(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let times = self
            .kl_eval_times
            .as_deref()
            .ok_or_else(|| Error::Argument(format!("{} has no evaluation times", self.label)))?;
        times.iter().map(|&t| self.path_value(xi, t)).collect()
    }

    /// Variance of `x(1)` under the truncated expansion.
    pub fn endpoint_variance(&self) -> f64 {
        self.path_weights(1.0).iter().map(|w| w * w).sum()
    }

    /// Draw `n` points. Identical `(seed, n, model)` gives identical bits.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::Argument("sample count must be at least 1".into()));
        }
        let parts = self.map_chunks(n, seed, |_, pts| pts.to_vec());
        let mut points = Vec::with_capacity(n * self.dim);
        for p in parts {
            points.extend_from_slice(&p);
        }
        Ok(SampleBatch {
            dim: self.dim,
            points,
            seed,
            substream_ids: (0..rng::chunk_count(n) as u64)
                .map(|c| rng::chunk_key(seed, c))
                .collect(),
        })
    }

    /// Run `f` on every chunk of the `n`-point batch for `seed`, in parallel,
    /// and return the results in chunk order. `f` receives the chunk index
    /// and its row-major points. The points are the rows of
    /// [`GaussianModel::sample`] for the same `(n, seed)`.
    pub fn map_chunks<T, F>(&self, n: usize, seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &[f64]) -> T + Sync,
    {
        let dim = self.dim;
        (0..rng::chunk_count(n))
            .into_par_iter()
            .map(|c| {
                let range = rng::chunk_range(n, c);
                let mut buf = vec![0.0; range.len() * dim];
                rng::fill_chunk(seed, c, dim, range.len(), &mut buf);
                f(c, &buf)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_has_unit_spectrum() {
        let m = build_model(&ModelDescriptor::IidGaussian { dim: 3 }).unwrap();
        assert_eq!(m.eigenvalues(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn kl_first_eigenvalue() {
        let m = build_model(&ModelDescriptor::KlBrownian { dim: 1 }).unwrap();
        assert!((m.eigenvalues()[0] - 4.0 / (PI * PI)).abs() < 1e-15);
        assert!((m.eigenvalues()[0] - 0.405285).abs() < 1e-6);
    }

    #[test]
    fn kl_endpoint_variance_d8() {
        let m = build_model(&ModelDescriptor::KlBrownian { dim: 8 }).unwrap();
        // (2/π²) Σ_{k≤8} (k−1/2)^{-2}, summed directly
        let direct: f64 = (1..=8).map(|k| (k as f64 - 0.5).powi(-2)).sum::<f64>() * 2.0 / (PI * PI);
        assert!((m.endpoint_variance() - direct).abs() < 1e-13);
        assert!((direct - 0.97470).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(build_model(&ModelDescriptor::IidGaussian { dim: 0 }).is_err());
        assert!(build_model(&ModelDescriptor::Spectrum {
            eigenvalues: vec![1.0, 0.0]
        })
        .is_err());
        assert!(build_model(&ModelDescriptor::Spectrum {
            eigenvalues: vec![1.0, f64::NAN]
        })
        .is_err());
        assert!(build_model(&ModelDescriptor::Spectrum {
            eigenvalues: vec![-2.0]
        })
        .is_err());
    }

    #[test]
    fn vhat_is_whitened_coordinate() {
        let iid = build_model(&ModelDescriptor::IidGaussian { dim: 2 }).unwrap();
        assert_eq!(iid.vhat(1, &Point::new(vec![0.5, -1.0])).unwrap(), 0.5);

        let kl = build_model(&ModelDescriptor::KlBrownian { dim: 2 }).unwrap();
        let v = kl.vhat(2, &Point::new(vec![0.0, 3.0])).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
        assert_eq!(kl.vhat(1, &Point::origin(2)).unwrap(), 0.0);

        assert!(matches!(
            kl.vhat(3, &Point::origin(2)),
            Err(Error::IndexOutOfRange { index: 3, dim: 2 })
        ));
        assert!(kl.vhat(0, &Point::origin(2)).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = build_model(&ModelDescriptor::IidGaussian { dim: 2 }).unwrap();
        let a = m.sample(10_000, 7).unwrap();
        let b = m.sample(10_000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10_000);
        assert_eq!(a.substream_ids.len(), rng::chunk_count(10_000));
        let c = m.sample(10_000, 8).unwrap();
        assert_ne!(a.points, c.points);
        assert!(m.sample(0, 1).is_err());
    }

    #[test]
    fn path_rendering_requires_kl() {
        let iid = build_model(&ModelDescriptor::IidGaussian { dim: 2 }).unwrap();
        assert!(iid.path_value(&[0.0, 0.0], 1.0).is_err());
        let kl = build_model(&ModelDescriptor::KlBrownian { dim: 4 }).unwrap();
        assert_eq!(kl.render_path(&[0.0; 4]).unwrap(), vec![0.0]);
        // x(0) = 0 for every path
        assert_eq!(kl.path_value(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap(), 0.0);
    }
}
