//! Vector fields on the Cameron–Martin space and the Gaussian divergence
//! `div_μ Ψ = Σ_k (D_k ψ_k − v̂_k ψ_k)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gauss_model::Point;

use super::{FunctionalOracle, DEFAULT_FD_STEP};

/// Default floor on `|D_H G|_H` below which kernel evaluations are excluded.
pub const DEFAULT_GRADIENT_FLOOR: f64 = 1e-12;

/// An H-valued field, given by its coefficients `ψ_k = ⟨Ψ, v_k⟩_H`.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn components(&self, xi: &[f64], out: &mut [f64]);

    fn has_jacobian(&self) -> bool {
        false
    }

    /// `out[j * d + k] = D_j ψ_k`. Only called when `has_jacobian`.
    fn jacobian(&self, _xi: &[f64], _out: &mut [f64]) {
        unimplemented!("field has no analytic jacobian")
    }

    fn describe(&self) -> String;
}

#[derive(Clone)]
pub struct VectorFieldOracle {
    field: Arc<dyn VectorField>,
    fd_step: f64,
}

impl fmt::Debug for VectorFieldOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldOracle")
            .field("field", &self.field.describe())
            .finish()
    }
}

impl VectorFieldOracle {
    pub fn new<F: VectorField + 'static>(field: F) -> Self {
        Self {
            field: Arc::new(field),
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    pub fn components(&self, xi: &[f64], out: &mut [f64]) {
        self.field.components(xi, out);
    }

    /// `Σ_k D_k ψ_k`, analytic or by central differences.
    pub fn trace_jacobian(&self, xi: &[f64]) -> f64 {
        let d = xi.len();
        if self.field.has_jacobian() {
            let mut j = vec![0.0; d * d];
            self.field.jacobian(xi, &mut j);
            return (0..d).map(|k| j[k * d + k]).sum();
        }
        let mut x = xi.to_vec();
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        let mut total = 0.0;
        for k in 0..d {
            let h = self.fd_step * (1.0 + xi[k].abs());
            x[k] = xi[k] + h;
            self.field.components(&x, &mut plus);
            x[k] = xi[k] - h;
            self.field.components(&x, &mut minus);
            x[k] = xi[k];
            total += (plus[k] - minus[k]) / (2.0 * h);
        }
        total
    }

    pub fn describe(&self) -> String {
        self.field.describe()
    }
}

/// `div_μ Ψ(p) = Σ_k (D_k ψ_k(p) − ξ_k ψ_k(p))`.
pub fn divergence_mu(field: &VectorFieldOracle, p: &Point) -> Result<f64> {
    let d = p.dim();
    let mut psi = vec![0.0; d];
    field.components(&p.xi, &mut psi);
    if let Some(k) = psi.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            format!("divergence of {}", field.describe()),
            format!("component {} is {}", k + 1, psi[k]),
        ));
    }
    let transport: f64 = psi.iter().zip(&p.xi).map(|(a, x)| a * x).sum();
    let value = field.trace_jacobian(&p.xi) - transport;
    if !value.is_finite() {
        return Err(Error::numerical(
            format!("divergence of {}", field.describe()),
            "non-finite jacobian trace",
        ));
    }
    Ok(value)
}

/// `Ψ ≡ h`.
#[derive(Debug, Clone)]
pub struct ConstantField(pub Vec<f64>);

impl VectorField for ConstantField {
    fn components(&self, _xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn has_jacobian(&self) -> bool {
        true
    }
    fn jacobian(&self, _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn describe(&self) -> String {
        format!("constant{:?}", self.0)
    }
}

/// `Ψ(ξ) = ξ`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityField;

impl VectorField for IdentityField {
    fn components(&self, xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(xi);
    }
    fn has_jacobian(&self) -> bool {
        true
    }
    fn jacobian(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        out.fill(0.0);
        for k in 0..d {
            out[k * d + k] = 1.0;
        }
    }
    fn describe(&self) -> String {
        "identity".into()
    }
}

/// `ψ_k(ξ) = ξ_k³`, no analytic jacobian.
#[derive(Debug, Clone, Copy)]
pub struct CubicField;

impl VectorField for CubicField {
    fn components(&self, xi: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(xi) {
            *o = x * x * x;
        }
    }
    fn describe(&self) -> String {
        "cubic".into()
    }
}

/// `ψ = D_H G / |D_H G|²_H` as a generic field. Its divergence goes through
/// finite differences; [`KernelField`] uses the expanded formula instead.
#[derive(Debug, Clone)]
pub struct KernelVectorField {
    pub base: FunctionalOracle,
}

impl VectorField for KernelVectorField {
    fn components(&self, xi: &[f64], out: &mut [f64]) {
        self.base.gradient_into(xi, out);
        let s: f64 = out.iter().map(|g| g * g).sum();
        for o in out.iter_mut() {
            *o /= s;
        }
    }
    fn describe(&self) -> String {
        format!("kernel[{}]", self.base.describe())
    }
}

/// The kernel field of `G` with its gradient-norm floor.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub base: FunctionalOracle,
    pub floor: f64,
}

/// Per-point output of [`KernelField::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub grad_norm_sq: f64,
    pub divergence: f64,
}

impl KernelField {
    pub fn new(base: FunctionalOracle) -> Self {
        Self {
            base,
            floor: DEFAULT_GRADIENT_FLOOR,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// Fills `grad` and `hess` with `∇G` and `D²G` at `xi` and returns the
    /// divergence of `∇G/|∇G|²`:
    /// `(ΔG − ξ·∇G)/|∇G|² − 2 ∇Gᵀ D²G ∇G/|∇G|⁴`.
    /// Returns `None` when `|∇G|` is below the floor.
    pub fn evaluate(&self, xi: &[f64], grad: &mut [f64], hess: &mut [f64]) -> Option<KernelEval> {
        let d = xi.len();
        self.base.gradient_into(xi, grad);
        let s: f64 = grad.iter().map(|g| g * g).sum();
        if !(s.sqrt() >= self.floor) {
            return None;
        }
        self.base.hessian_into(xi, hess);
        let mut laplacian = 0.0;
        let mut quad = 0.0;
        let mut transport = 0.0;
        for j in 0..d {
            laplacian += hess[j * d + j];
            transport += xi[j] * grad[j];
            let row = &hess[j * d..(j + 1) * d];
            let hg: f64 = row.iter().zip(grad.iter()).map(|(h, g)| h * g).sum();
            quad += grad[j] * hg;
        }
        Some(KernelEval {
            grad_norm_sq: s,
            divergence: (laplacian - transport) / s - 2.0 * quad / (s * s),
        })
    }
}

/// `div_μ(D_H G/|D_H G|²_H)` at `p` by the expanded formula.
pub fn kernel_divergence(kernel: &KernelField, p: &Point) -> Result<f64> {
    kernel.base.check_dim(p.dim())?;
    let d = p.dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    match kernel.evaluate(&p.xi, &mut grad, &mut hess) {
        Some(k) if k.divergence.is_finite() => Ok(k.divergence),
        Some(k) => Err(Error::numerical(
            format!("kernel divergence of {}", kernel.base.describe()),
            format!("value {}", k.divergence),
        )),
        None => Err(Error::GradientTooSmall {
            norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            floor: kernel.floor,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{Coordinate, Norm2};

    #[test]
    fn constant_field_divergence_is_minus_vhat() {
        let f = VectorFieldOracle::new(ConstantField(vec![1.0, 0.0]));
        let v = divergence_mu(&f, &Point::new(vec![0.7, -0.2])).unwrap();
        assert_eq!(v, -0.7);
    }

    #[test]
    fn identity_field_divergence() {
        let f = VectorFieldOracle::new(IdentityField);
        let xi = vec![0.5, -1.0, 2.0];
        let s: f64 = xi.iter().map(|x| x * x).sum();
        let v = divergence_mu(&f, &Point::new(xi)).unwrap();
        assert!((v - (3.0 - s)).abs() < 1e-14);
    }

    #[test]
    fn zero_field_divergence() {
        let f = VectorFieldOracle::new(ConstantField(vec![0.0; 4]));
        assert_eq!(
            divergence_mu(&f, &Point::new(vec![1.0, 2.0, 3.0, 4.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn cubic_field_uses_finite_differences() {
        let f = VectorFieldOracle::new(CubicField);
        let xi = vec![0.5, -1.5];
        let expect: f64 = xi.iter().map(|x: &f64| 3.0 * x * x - x.powi(4)).sum();
        let v = divergence_mu(&f, &Point::new(xi)).unwrap();
        assert!((v - expect).abs() < 1e-8);
    }

    #[test]
    fn kernel_divergence_linear() {
        let k = KernelField::new(FunctionalOracle::new(Coordinate::new(1)));
        let v = kernel_divergence(&k, &Point::new(vec![1.3, 0.4])).unwrap();
        assert!((v + 1.3).abs() < 1e-15);
    }

    #[test]
    fn kernel_divergence_norm2_closed_form() {
        let k = KernelField::new(FunctionalOracle::new(Norm2));
        let xi = vec![0.3, -0.4, 1.0, 0.2, -0.9];
        let s: f64 = xi.iter().map(|x| x * x).sum();
        let v = kernel_divergence(&k, &Point::new(xi)).unwrap();
        assert!((v - (1.5 / s - 0.5)).abs() < 1e-14);

        let k2 = KernelField::new(FunctionalOracle::new(Norm2));
        let v2 = kernel_divergence(&k2, &Point::new(vec![0.3, 2.0])).unwrap();
        assert!((v2 + 0.5).abs() < 1e-14);
    }

    #[test]
    fn kernel_divergence_below_floor() {
        let k = KernelField::new(FunctionalOracle::new(Norm2));
        let err = kernel_divergence(&k, &Point::origin(3)).unwrap_err();
        assert!(matches!(err, Error::GradientTooSmall { .. }));
    }

    #[test]
    fn kernel_formula_matches_generic_divergence() {
        let g = FunctionalOracle::new(Norm2);
        let fast = KernelField::new(g.clone());
        let slow = VectorFieldOracle::new(KernelVectorField { base: g });
        let p = Point::new(vec![0.8, -0.6, 1.2]);
        let a = kernel_divergence(&fast, &p).unwrap();
        let b = divergence_mu(&slow, &p).unwrap();
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
}
