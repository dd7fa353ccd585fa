use crate::error::Result;
use crate::gauss_model::{GaussianModel, ModelFamily};

use super::{Functional, FunctionalOracle, LevelGeometry};

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Functional for Constant {
    fn eval(&self, _xi: &[f64]) -> f64 {
        self.0
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn describe(&self) -> String {
        format!("{}", self.0)
    }
}

/// `ξ_k`, 1-based.
#[derive(Debug, Clone, Copy)]
pub struct Coordinate {
    k: usize,
}

impl Coordinate {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "coordinates are 1-based");
        Self { k }
    }
}

impl Functional for Coordinate {
    fn eval(&self, xi: &[f64]) -> f64 {
        xi[self.k - 1]
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[self.k - 1] = 1.0;
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn min_dim(&self) -> usize {
        self.k
    }
    fn level_geometry(&self) -> Option<LevelGeometry> {
        let mut weights = vec![0.0; self.k];
        weights[self.k - 1] = 1.0;
        Some(LevelGeometry::Hyperplane { weights })
    }
    fn describe(&self) -> String {
        format!("coordinate({})", self.k)
    }
}

/// `Σ w_k ξ_k`.
#[derive(Debug, Clone)]
pub struct Linear {
    weights: Vec<f64>,
    label: Option<String>,
}

impl Linear {
    pub fn new(weights: Vec<f64>) -> Self {
        Self {
            weights,
            label: None,
        }
    }

    pub fn labelled(weights: Vec<f64>, label: impl Into<String>) -> Self {
        Self {
            weights,
            label: Some(label.into()),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Functional for Linear {
    fn eval(&self, xi: &[f64]) -> f64 {
        self.weights.iter().zip(xi).map(|(w, x)| w * x).sum()
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[..self.weights.len()].copy_from_slice(&self.weights);
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn min_dim(&self) -> usize {
        self.weights.len()
    }
    fn level_geometry(&self) -> Option<LevelGeometry> {
        Some(LevelGeometry::Hyperplane {
            weights: self.weights.clone(),
        })
    }
    fn describe(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => {
                let w: Vec<String> = self.weights.iter().map(|w| w.to_string()).collect();
                format!("linear({})", w.join(", "))
            }
        }
    }
}

/// `Σ ξ_k²`.
#[derive(Debug, Clone, Copy)]
pub struct Norm2;

impl Functional for Norm2 {
    fn eval(&self, xi: &[f64]) -> f64 {
        xi.iter().map(|x| x * x).sum()
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(xi) {
            *o = 2.0 * x;
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        out.fill(0.0);
        for k in 0..d {
            out[k * d + k] = 2.0;
        }
    }
    fn level_geometry(&self) -> Option<LevelGeometry> {
        Some(LevelGeometry::Sphere)
    }
    fn describe(&self) -> String {
        "norm2".into()
    }
}

/// Path value at `t = 1` of a Karhunen–Loève Brownian model.
pub fn bm_endpoint(model: &GaussianModel) -> Result<Linear> {
    if model.family() != ModelFamily::KlBrownian {
        return Err(crate::Error::Argument(format!(
            "bm_endpoint needs a kl_brownian model, got {}",
            model.label()
        )));
    }
    Ok(Linear::labelled(model.path_weights(1.0), "bm_endpoint"))
}

/// `min(G, c)`.
#[derive(Debug, Clone)]
pub struct Clipped {
    base: FunctionalOracle,
    cap: f64,
}

impl Clipped {
    pub fn new(base: FunctionalOracle, cap: f64) -> Self {
        Self { base, cap }
    }
}

impl Functional for Clipped {
    fn eval(&self, xi: &[f64]) -> f64 {
        self.base.eval(xi).min(self.cap)
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        if self.base.eval(xi) < self.cap {
            self.base.gradient_into(xi, out);
        } else {
            out.fill(0.0);
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, xi: &[f64], out: &mut [f64]) {
        if self.base.eval(xi) < self.cap {
            self.base.hessian_into(xi, out);
        } else {
            out.fill(0.0);
        }
    }
    fn exact_derivatives(&self) -> bool {
        self.base.inner().has_hessian() && self.base.inner().exact_derivatives()
    }
    fn min_dim(&self) -> usize {
        self.base.min_dim()
    }
    fn describe(&self) -> String {
        format!("min({}, {})", self.base.describe(), self.cap)
    }
}

/// `D_k G` as a functional in its own right, 1-based `k`.
#[derive(Debug, Clone)]
pub struct PartialDerivative {
    base: FunctionalOracle,
    k: usize,
}

impl PartialDerivative {
    pub fn new(base: FunctionalOracle, k: usize) -> Self {
        assert!(k >= 1, "coordinates are 1-based");
        Self { base, k }
    }
}

impl Functional for PartialDerivative {
    fn eval(&self, xi: &[f64]) -> f64 {
        let mut g = vec![0.0; xi.len()];
        self.base.gradient_into(xi, &mut g);
        g[self.k - 1]
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        let mut h = vec![0.0; d * d];
        self.base.hessian_into(xi, &mut h);
        for j in 0..d {
            out[j] = h[(self.k - 1) * d + j];
        }
    }
    fn exact_derivatives(&self) -> bool {
        self.base.inner().has_hessian() && self.base.inner().exact_derivatives()
    }
    fn min_dim(&self) -> usize {
        self.base.min_dim().max(self.k)
    }
    fn describe(&self) -> String {
        format!("D{}[{}]", self.k, self.base.describe())
    }
}

/// Pointwise product `a · b`.
#[derive(Debug, Clone)]
pub struct Product {
    a: FunctionalOracle,
    b: FunctionalOracle,
}

impl Product {
    pub fn new(a: FunctionalOracle, b: FunctionalOracle) -> Self {
        Self { a, b }
    }
}

impl Functional for Product {
    fn eval(&self, xi: &[f64]) -> f64 {
        self.a.eval(xi) * self.b.eval(xi)
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        let (va, vb) = (self.a.eval(xi), self.b.eval(xi));
        let mut ga = vec![0.0; d];
        self.a.gradient_into(xi, &mut ga);
        self.b.gradient_into(xi, out);
        for k in 0..d {
            out[k] = va * out[k] + vb * ga[k];
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        let (va, vb) = (self.a.eval(xi), self.b.eval(xi));
        let mut ga = vec![0.0; d];
        let mut gb = vec![0.0; d];
        let mut ha = vec![0.0; d * d];
        self.a.gradient_into(xi, &mut ga);
        self.b.gradient_into(xi, &mut gb);
        self.a.hessian_into(xi, &mut ha);
        self.b.hessian_into(xi, out);
        for j in 0..d {
            for k in 0..d {
                let i = j * d + k;
                out[i] = va * out[i] + vb * ha[i] + ga[j] * gb[k] + gb[j] * ga[k];
            }
        }
    }
    fn exact_derivatives(&self) -> bool {
        let exact = |f: &FunctionalOracle| {
            f.inner().has_gradient() && f.inner().has_hessian() && f.inner().exact_derivatives()
        };
        exact(&self.a) && exact(&self.b)
    }
    fn min_dim(&self) -> usize {
        self.a.min_dim().max(self.b.min_dim())
    }
    fn describe(&self) -> String {
        format!("({})*({})", self.a.describe(), self.b.describe())
    }
}

/// Linear combination `Σ c_i f_i`.
#[derive(Debug, Clone)]
pub struct Sum {
    terms: Vec<(f64, FunctionalOracle)>,
}

impl Sum {
    pub fn new(terms: Vec<(f64, FunctionalOracle)>) -> Self {
        Self { terms }
    }
}

impl Functional for Sum {
    fn eval(&self, xi: &[f64]) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.eval(xi)).sum()
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut g = vec![0.0; xi.len()];
        for (c, f) in &self.terms {
            f.gradient_into(xi, &mut g);
            for (o, v) in out.iter_mut().zip(&g) {
                *o += c * v;
            }
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut h = vec![0.0; out.len()];
        for (c, f) in &self.terms {
            f.hessian_into(xi, &mut h);
            for (o, v) in out.iter_mut().zip(&h) {
                *o += c * v;
            }
        }
    }
    fn exact_derivatives(&self) -> bool {
        self.terms.iter().all(|(_, f)| {
            f.inner().has_gradient() && f.inner().has_hessian() && f.inner().exact_derivatives()
        })
    }
    fn min_dim(&self) -> usize {
        self.terms
            .iter()
            .map(|(_, f)| f.min_dim())
            .max()
            .unwrap_or(0)
    }
    fn describe(&self) -> String {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(c, f)| format!("{c}*({})", f.describe()))
            .collect();
        parts.join(" + ")
    }
}

/// `c · f`.
pub fn scaled(c: f64, f: FunctionalOracle) -> Sum {
    Sum::new(vec![(c, f)])
}

/// `exp(−|ξ|²/(2m²))`, a smooth cutoff that tends to 1 pointwise as `m → ∞`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianCutoff {
    pub scale: f64,
}

impl Functional for GaussianCutoff {
    fn eval(&self, xi: &[f64]) -> f64 {
        let s: f64 = xi.iter().map(|x| x * x).sum();
        (-s / (2.0 * self.scale * self.scale)).exp()
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        let v = self.eval(xi);
        let a = 1.0 / (self.scale * self.scale);
        for (o, x) in out.iter_mut().zip(xi) {
            *o = -a * x * v;
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        let v = self.eval(xi);
        let a = 1.0 / (self.scale * self.scale);
        for j in 0..d {
            for k in 0..d {
                let delta = if j == k { 1.0 } else { 0.0 };
                out[j * d + k] = v * (a * a * xi[j] * xi[k] - a * delta);
            }
        }
    }
    fn describe(&self) -> String {
        format!("cutoff({})", self.scale)
    }
}
