//! H-differential calculus on whitened coordinates.
//!
//! Functionals are evaluated on the whitened coordinates `ξ` of a point, so
//! `D_k f = ∂f/∂ξ_k`, the H-gradient is the ordinary gradient in `ξ` and the
//! H-norm is the Euclidean norm of that gradient.

mod builtins;
mod diagnostics;
mod field;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss_model::{HVector, Point};

pub use builtins::{
    bm_endpoint, scaled, Clipped, Constant, Coordinate, GaussianCutoff, Linear, Norm2,
    PartialDerivative, Product, Sum,
};
pub(crate) use diagnostics::variance_unreliable;
pub use diagnostics::{
    hill_tail_index, hypothesis_diagnostics, DiagnosticsConfig, HypothesisReport, MomentEstimate,
};
pub use field::{
    divergence_mu, kernel_divergence, ConstantField, CubicField, IdentityField, KernelEval,
    KernelField, KernelVectorField, VectorField, VectorFieldOracle, DEFAULT_GRADIENT_FLOOR,
};

/// Default base step for central differences. The step on coordinate `k`
/// is `fd_step · (1 + |ξ_k|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A scalar functional of the whitened coordinates.
///
/// Implementations must be pure: the engine evaluates them from several
/// workers at once.
pub trait Functional: Send + Sync + fmt::Debug {
    fn eval(&self, xi: &[f64]) -> f64;

    /// Whether [`Functional::gradient`] is implemented.
    fn has_gradient(&self) -> bool {
        false
    }

    /// Write `∂f/∂ξ_k` into `out[k]`. Only called when `has_gradient`.
    fn gradient(&self, _xi: &[f64], _out: &mut [f64]) {
        unimplemented!("functional has no analytic gradient")
    }

    /// Whether [`Functional::hessian`] is implemented.
    fn has_hessian(&self) -> bool {
        false
    }

    /// Write `∂²f/∂ξ_j∂ξ_k` into `out[j * d + k]`. Only called when `has_hessian`.
    fn hessian(&self, _xi: &[f64], _out: &mut [f64]) {
        unimplemented!("functional has no analytic hessian")
    }

    /// False when the derivatives reported above are themselves built from
    /// finite differences somewhere down the tree.
    fn exact_derivatives(&self) -> bool {
        true
    }

    /// Smallest dimension this functional can be evaluated in.
    fn min_dim(&self) -> usize {
        0
    }

    /// Closed-form shape of the level sets, when known.
    fn level_geometry(&self) -> Option<LevelGeometry> {
        None
    }

    fn describe(&self) -> String;
}

/// Level sets with an exact quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelGeometry {
    /// `G = ⟨w, ξ⟩`; `w` may be shorter than the model dimension.
    Hyperplane { weights: Vec<f64> },
    /// `G = |ξ|²`.
    Sphere,
}

/// How a derivative was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// A functional together with its finite-difference policy.
#[derive(Clone)]
pub struct FunctionalOracle {
    inner: Arc<dyn Functional>,
    fd_step: f64,
}

impl fmt::Debug for FunctionalOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalOracle")
            .field("functional", &self.inner.describe())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl FunctionalOracle {
    pub fn new<F: Functional + 'static>(f: F) -> Self {
        Self::from_arc(Arc::new(f))
    }

    pub fn from_arc(inner: Arc<dyn Functional>) -> Self {
        Self {
            inner,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        assert!(step > 0.0, "finite-difference step must be positive");
        self.fd_step = step;
        self
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn inner(&self) -> &Arc<dyn Functional> {
        &self.inner
    }

    pub fn describe(&self) -> String {
        self.inner.describe()
    }

    pub fn level_geometry(&self) -> Option<LevelGeometry> {
        self.inner.level_geometry()
    }

    pub fn min_dim(&self) -> usize {
        self.inner.min_dim()
    }

    #[inline]
    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.inner.eval(xi)
    }

    pub fn gradient_source(&self) -> DerivativeSource {
        if self.inner.has_gradient() && self.inner.exact_derivatives() {
            DerivativeSource::Analytic
        } else {
            DerivativeSource::FiniteDifference
        }
    }

    pub fn hessian_source(&self) -> DerivativeSource {
        if self.inner.has_hessian() && self.inner.exact_derivatives() {
            DerivativeSource::Analytic
        } else {
            DerivativeSource::FiniteDifference
        }
    }

    fn step(&self, x: f64) -> f64 {
        self.fd_step * (1.0 + x.abs())
    }

    /// Gradient in `ξ`, analytic when available, otherwise central differences.
    pub fn gradient_into(&self, xi: &[f64], out: &mut [f64]) {
        if self.inner.has_gradient() {
            self.inner.gradient(xi, out);
        } else {
            self.fd_gradient(xi, out);
        }
    }

    /// Central-difference gradient, regardless of analytic availability.
    pub fn fd_gradient(&self, xi: &[f64], out: &mut [f64]) {
        let mut x = xi.to_vec();
        for k in 0..xi.len() {
            let h = self.step(xi[k]);
            x[k] = xi[k] + h;
            let fp = self.inner.eval(&x);
            x[k] = xi[k] - h;
            let fm = self.inner.eval(&x);
            x[k] = xi[k];
            out[k] = (fp - fm) / (2.0 * h);
        }
    }

    /// Hessian in `ξ`, row-major. Falls back to central differences of the
    /// gradient, or nested central differences of values.
    pub fn hessian_into(&self, xi: &[f64], out: &mut [f64]) {
        if self.inner.has_hessian() {
            self.inner.hessian(xi, out);
        } else {
            self.fd_hessian(xi, out);
        }
    }

    pub fn fd_hessian(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        let mut x = xi.to_vec();
        if self.inner.has_gradient() {
            let mut gp = vec![0.0; d];
            let mut gm = vec![0.0; d];
            for j in 0..d {
                let h = self.step(xi[j]);
                x[j] = xi[j] + h;
                self.inner.gradient(&x, &mut gp);
                x[j] = xi[j] - h;
                self.inner.gradient(&x, &mut gm);
                x[j] = xi[j];
                for k in 0..d {
                    out[j * d + k] = (gp[k] - gm[k]) / (2.0 * h);
                }
            }
            for j in 0..d {
                for k in (j + 1)..d {
                    let s = 0.5 * (out[j * d + k] + out[k * d + j]);
                    out[j * d + k] = s;
                    out[k * d + j] = s;
                }
            }
            return;
        }
        let f0 = self.inner.eval(xi);
        for j in 0..d {
            let hj = self.step(xi[j]);
            // diagonal from the three-point stencil
            x[j] = xi[j] + hj;
            let fp = self.inner.eval(&x);
            x[j] = xi[j] - hj;
            let fm = self.inner.eval(&x);
            x[j] = xi[j];
            out[j * d + j] = (fp - 2.0 * f0 + fm) / (hj * hj);
            for k in (j + 1)..d {
                let hk = self.step(xi[k]);
                let mut corner = |sj: f64, sk: f64| {
                    x[j] = xi[j] + sj * hj;
                    x[k] = xi[k] + sk * hk;
                    let v = self.inner.eval(&x);
                    x[j] = xi[j];
                    x[k] = xi[k];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                    + corner(-1.0, -1.0))
                    / (4.0 * hj * hk);
                out[j * d + k] = v;
                out[k * d + j] = v;
            }
        }
    }

    /// `D_H f(p)` with a check for non-finite output.
    pub fn h_gradient(&self, p: &Point) -> Result<(HVector, DerivativeSource)> {
        self.check_dim(p.dim())?;
        let mut g = vec![0.0; p.dim()];
        self.gradient_into(&p.xi, &mut g);
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("h_gradient of {}", self.describe()),
                format!("component {} is {}", k + 1, g[k]),
            ));
        }
        Ok((HVector::new(g), self.gradient_source()))
    }

    /// `D²_H f(p)` as a row-major `d × d` matrix.
    pub fn h_hessian(&self, p: &Point) -> Result<(Vec<f64>, DerivativeSource)> {
        self.check_dim(p.dim())?;
        let d = p.dim();
        let mut h = vec![0.0; d * d];
        self.hessian_into(&p.xi, &mut h);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("h_hessian of {}", self.describe()),
                "non-finite entry",
            ));
        }
        Ok((h, self.hessian_source()))
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let need = self.min_dim();
        if dim < need {
            return Err(Error::IndexOutOfRange { index: need, dim });
        }
        Ok(())
    }
}

/// `h_gradient` as a free function.
pub fn h_gradient(f: &FunctionalOracle, p: &Point) -> Result<HVector> {
    f.h_gradient(p).map(|(g, _)| g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_functional_gradient() {
        let f = FunctionalOracle::new(Coordinate::new(1));
        let (g, src) = f.h_gradient(&Point::new(vec![0.3, -2.0, 5.0])).unwrap();
        assert_eq!(g.coeffs, vec![1.0, 0.0, 0.0]);
        assert_eq!(src, DerivativeSource::Analytic);
    }

    #[test]
    fn norm2_gradient_matches_fd() {
        let f = FunctionalOracle::new(Norm2);
        let p = Point::new(vec![0.7, -1.1, 0.2]);
        let (g, _) = f.h_gradient(&p).unwrap();
        assert_eq!(g.coeffs, vec![1.4, -2.2, 0.4]);
        let mut fd = vec![0.0; 3];
        f.fd_gradient(&p.xi, &mut fd);
        for (a, b) in g.coeffs.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[derive(Debug)]
    struct NoDerivs;
    impl Functional for NoDerivs {
        fn eval(&self, xi: &[f64]) -> f64 {
            xi[0] * xi[0] * xi[1] + xi[1].sin()
        }
        fn describe(&self) -> String {
            "x1^2 x2 + sin x2".into()
        }
    }

    #[test]
    fn fd_fallback_is_flagged_and_accurate() {
        let f = FunctionalOracle::new(NoDerivs);
        assert_eq!(f.gradient_source(), DerivativeSource::FiniteDifference);
        let p = Point::new(vec![0.5, 1.2]);
        let (g, src) = f.h_gradient(&p).unwrap();
        assert_eq!(src, DerivativeSource::FiniteDifference);
        assert!((g.coeffs[0] - 2.0 * 0.5 * 1.2).abs() < 1e-8);
        assert!((g.coeffs[1] - (0.25 + 1.2f64.cos())).abs() < 1e-8);
        let (h, _) = f.h_hessian(&p).unwrap();
        assert!((h[0] - 2.4).abs() < 1e-4);
        assert!((h[1] - 1.0).abs() < 1e-4);
        assert!((h[2] - 1.0).abs() < 1e-4);
        assert!((h[3] + 1.2f64.sin()).abs() < 1e-4);
    }

    #[derive(Debug)]
    struct Blowup;
    impl Functional for Blowup {
        fn eval(&self, xi: &[f64]) -> f64 {
            xi[0].sqrt()
        }
        fn describe(&self) -> String {
            "sqrt(x1)".into()
        }
    }

    #[test]
    fn non_finite_gradient_is_a_fault() {
        let f = FunctionalOracle::new(Blowup);
        let err = f.h_gradient(&Point::new(vec![0.0])).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn coordinate_needs_dimension() {
        let f = FunctionalOracle::new(Coordinate::new(4));
        assert!(f.h_gradient(&Point::origin(3)).is_err());
    }
}
