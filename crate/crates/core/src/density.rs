//! Densities of the image measures `φμ∘G⁻¹`.
//!
//! Two estimators share one batch of samples per job:
//!
//! * **divergence**: `q_φ(r) = E[1_{G<r} (φ div_μψ + ⟨D_Hφ, ψ⟩_H)]` with
//!   `ψ = D_H G/|D_H G|²_H`;
//! * **mollified**: the symmetric difference quotient
//!   `(F_φ(r+ε) − F_φ(r−ε))/(2ε)` of `F_φ(r) = E[φ 1_{G<r}]`.
//!
//! The integrand `w = φ div_μψ + ⟨D_Hφ, ψ⟩_H = div_μ(φψ)` has mean zero, so
//! `E[(1_{G<r} − t) w]` is an equally valid divergence estimator for any
//! constant `t`. The balanced form picks `t(r) = Σ_{G<r} c² / Σ c²` with
//! `c = div_μψ`, the variance-optimal weight for `φ ≡ 1`. It depends on `G`
//! only, so the estimate stays linear in `φ`. Where the kernel divergence
//! has a heavy tail near the singular set of `G` this moves the estimate to
//! the side of the level set that avoids it.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{
    variance_unreliable, FunctionalOracle, KernelField, DEFAULT_GRADIENT_FLOOR,
};
use crate::gauss_model::GaussianModel;
use crate::rng::{self, pairwise_sum};
use crate::stats::{batch_estimate, quantile_sorted, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Divergence,
    Mollified,
    Both,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "divergence" => Some(Self::Divergence),
            "mollified" => Some(Self::Mollified),
            "both" => Some(Self::Both),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Divergence => "divergence",
            Self::Mollified => "mollified",
            Self::Both => "both",
        }
    }

    fn wants_divergence(&self) -> bool {
        matches!(self, Self::Divergence | Self::Both)
    }
}

/// Which side of the level set the divergence estimator integrates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceForm {
    /// `E[1_{G<r} w]` exactly as written.
    Lower,
    /// `E[(1_{G<r} − t(r)) w]`, see the module docs.
    #[default]
    Balanced,
}

#[derive(Debug, Clone)]
pub struct DensityJob {
    pub model: GaussianModel,
    pub g: FunctionalOracle,
    pub phi: FunctionalOracle,
    pub r_grid: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    /// Mollification half-width; `None` picks the default bandwidth.
    pub epsilon: Option<f64>,
    pub estimator: EstimatorKind,
    pub form: DivergenceForm,
    pub floor: f64,
}

impl DensityJob {
    pub fn new(
        model: GaussianModel,
        g: FunctionalOracle,
        phi: FunctionalOracle,
        r_grid: Vec<f64>,
    ) -> Self {
        Self {
            model,
            g,
            phi,
            r_grid,
            n: 1_000_000,
            seed: 0,
            epsilon: None,
            estimator: EstimatorKind::Both,
            form: DivergenceForm::Balanced,
            floor: DEFAULT_GRADIENT_FLOOR,
        }
    }

    pub fn with_samples(mut self, n: usize, seed: u64) -> Self {
        self.n = n;
        self.seed = seed;
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = Some(eps);
        self
    }

    pub fn with_estimator(mut self, e: EstimatorKind) -> Self {
        self.estimator = e;
        self
    }

    pub fn with_form(mut self, form: DivergenceForm) -> Self {
        self.form = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_grid.is_empty() {
            return Err(Error::Argument("r_grid is empty".into()));
        }
        if self.r_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Argument("r_grid must be strictly increasing".into()));
        }
        if self.r_grid.iter().any(|r| r.is_nan()) {
            return Err(Error::Argument("r_grid contains NaN".into()));
        }
        if self.n == 0 {
            return Err(Error::Argument("n must be at least 1".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Argument(format!(
                    "epsilon must be positive, got {e}"
                )));
            }
        }
        let d = self.model.dim();
        self.g.check_dim(d)?;
        self.phi.check_dim(d)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCurve {
    pub r: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub estimator: EstimatorKind,
    pub excluded_fraction: f64,
    pub n: usize,
    pub seed: u64,
    /// Mollification half-width, for the mollified estimator.
    pub epsilon: Option<f64>,
    /// Grid points where no sample fell in the mollification window.
    pub unresolved: Vec<bool>,
    /// Set when `G` fails the integrability diagnostics.
    pub variance_unreliable: bool,
    /// `max_r |q̂(r)|` over the largest sampled `|φ|`. An empirical stand-in
    /// for the constant of the density bound, not a certified value.
    pub bound_proxy: f64,
}

impl DensityCurve {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn point(&self, i: usize) -> Estimate {
        Estimate::new(self.estimate[i], self.stderr[i])
    }

    /// Trapezoid integral of the estimates over the grid.
    pub fn trapezoid(&self) -> f64 {
        self.r
            .windows(2)
            .zip(self.estimate.windows(2))
            .map(|(r, q)| 0.5 * (r[1] - r[0]) * (q[0] + q[1]))
            .sum()
    }
}

/// Per-sample quantities shared by every estimator of one job.
#[derive(Debug, Clone)]
pub struct SampleTable {
    pub n: usize,
    pub seed: u64,
    pub g: Vec<f64>,
    pub phi: Vec<f64>,
    /// `div_μ(φψ)`; zero on excluded samples. Empty unless requested.
    pub w: Vec<f64>,
    /// `div_μ ψ`; `NaN` on excluded samples. Empty unless requested.
    pub kernel_div: Vec<f64>,
    /// `|D_H G|_H`. Empty unless requested.
    pub grad_norm: Vec<f64>,
    pub excluded: usize,
}

impl SampleTable {
    /// Sample once and evaluate `G`, `φ` and, when `with_divergence`, the
    /// divergence integrand.
    pub fn build(
        model: &GaussianModel,
        g: &FunctionalOracle,
        phi: &FunctionalOracle,
        n: usize,
        seed: u64,
        with_divergence: bool,
        floor: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("n must be at least 1".into()));
        }
        let d = model.dim();
        g.check_dim(d)?;
        phi.check_dim(d)?;
        let kernel = KernelField::new(g.clone()).with_floor(floor);

        struct Part {
            g: Vec<f64>,
            phi: Vec<f64>,
            w: Vec<f64>,
            kdiv: Vec<f64>,
            norm: Vec<f64>,
            excluded: usize,
        }

        let parts: Vec<Result<Part>> = model.map_chunks(n, seed, |chunk, pts| {
            let len = pts.len() / d;
            let mut part = Part {
                g: Vec::with_capacity(len),
                phi: Vec::with_capacity(len),
                w: Vec::new(),
                kdiv: Vec::new(),
                norm: Vec::new(),
                excluded: 0,
            };
            if with_divergence {
                part.w.reserve(len);
                part.kdiv.reserve(len);
                part.norm.reserve(len);
            }
            let mut grad = vec![0.0; d];
            let mut hess = vec![0.0; d * d];
            let mut grad_phi = vec![0.0; d];
            for (i, xi) in pts.chunks_exact(d).enumerate() {
                let index = chunk * rng::CHUNK_SIZE + i;
                let gv = g.eval(xi);
                let pv = phi.eval(xi);
                if !gv.is_finite() || !pv.is_finite() {
                    return Err(Error::numerical(
                        format!("sample {index}"),
                        format!("G = {gv}, phi = {pv}"),
                    ));
                }
                part.g.push(gv);
                part.phi.push(pv);
                if !with_divergence {
                    continue;
                }
                match kernel.evaluate(xi, &mut grad, &mut hess) {
                    Some(k) => {
                        phi.gradient_into(xi, &mut grad_phi);
                        let transport: f64 =
                            grad_phi.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>()
                                / k.grad_norm_sq;
                        let w = pv * k.divergence + transport;
                        if !w.is_finite() {
                            return Err(Error::numerical(
                                format!("divergence integrand at sample {index}"),
                                format!("value {w}"),
                            ));
                        }
                        part.w.push(w);
                        part.kdiv.push(k.divergence);
                        part.norm.push(k.grad_norm_sq.sqrt());
                    }
                    None => {
                        part.excluded += 1;
                        part.w.push(0.0);
                        part.kdiv.push(f64::NAN);
                        part.norm
                            .push(grad.iter().map(|v| v * v).sum::<f64>().sqrt());
                    }
                }
            }
            Ok(part)
        });

        let mut table = SampleTable {
            n,
            seed,
            g: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            w: Vec::new(),
            kernel_div: Vec::new(),
            grad_norm: Vec::new(),
            excluded: 0,
        };
        for part in parts {
            let part = part?;
            table.g.extend_from_slice(&part.g);
            table.phi.extend_from_slice(&part.phi);
            table.w.extend_from_slice(&part.w);
            table.kernel_div.extend_from_slice(&part.kdiv);
            table.grad_norm.extend_from_slice(&part.norm);
            table.excluded += part.excluded;
        }
        Ok(table)
    }

    pub fn has_divergence(&self) -> bool {
        self.w.len() == self.n
    }

    pub fn excluded_fraction(&self) -> f64 {
        self.excluded as f64 / self.n as f64
    }

    /// Batch-means estimate of the mean of `f(i)` over all samples.
    pub fn mean_of<F>(&self, f: F) -> Estimate
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let chunks = rng::chunk_count(self.n);
        let sums: Vec<(f64, f64, usize)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let range = rng::chunk_range(self.n, c);
                let len = range.len();
                let mut s = 0.0;
                let mut sq = 0.0;
                for i in range {
                    let y = f(i);
                    s += y;
                    sq += y * y;
                }
                (s, sq, len)
            })
            .collect();
        let (s, (sq, cnt)): (Vec<f64>, (Vec<f64>, Vec<usize>)) =
            sums.into_iter().map(|(a, b, c)| (a, (b, c))).unzip();
        batch_estimate(&s, &sq, &cnt)
    }

    /// `F_φ(r)` on the shared samples.
    pub fn cdf(&self, r: f64) -> Estimate {
        self.mean_of(|i| if self.g[i] < r { self.phi[i] } else { 0.0 })
    }

    /// `t(r)` of the balanced divergence form.
    pub fn balance_weight(&self, r: f64) -> f64 {
        let below: Vec<f64> = self
            .kernel_div
            .iter()
            .zip(&self.g)
            .map(|(c, &g)| if g < r && !c.is_nan() { c * c } else { 0.0 })
            .collect();
        let all: Vec<f64> = self
            .kernel_div
            .iter()
            .map(|c| if c.is_nan() { 0.0 } else { c * c })
            .collect();
        let total = pairwise_sum(&all);
        if total > 0.0 {
            pairwise_sum(&below) / total
        } else {
            0.0
        }
    }

    /// Divergence-formula estimate of `q_φ(r)`.
    pub fn divergence_at(&self, r: f64, form: DivergenceForm) -> Estimate {
        assert!(
            self.has_divergence(),
            "table built without divergence integrand"
        );
        let t = match form {
            DivergenceForm::Lower => 0.0,
            DivergenceForm::Balanced => self.balance_weight(r),
        };
        self.mean_of(|i| {
            let ind = if self.g[i] < r { 1.0 } else { 0.0 };
            (ind - t) * self.w[i]
        })
    }

    /// Symmetric difference quotient of `F_φ` at `r` with half-width `eps`.
    /// The flag is set when no sample lands in `[r − ε, r + ε)`.
    pub fn mollified_at(&self, r: f64, eps: f64) -> (Estimate, bool) {
        let (lo, hi) = (r - eps, r + eps);
        let hits = self.g.iter().filter(|&&g| g >= lo && g < hi).count();
        if hits == 0 {
            return (Estimate::exact(0.0), true);
        }
        let scale = 1.0 / (2.0 * eps);
        let e = self.mean_of(|i| {
            let g = self.g[i];
            if g >= lo && g < hi {
                self.phi[i] * scale
            } else {
                0.0
            }
        });
        (e, false)
    }

    /// `max(0.01, 2·IQR(G)·n^{-1/3})`.
    pub fn default_epsilon(&self) -> f64 {
        let mut sorted = self.g.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        (2.0 * iqr * (self.n as f64).powf(-1.0 / 3.0)).max(0.01)
    }

    pub fn variance_unreliable(&self) -> bool {
        self.has_divergence() && variance_unreliable(&self.grad_norm, &self.kernel_div)
    }

    fn bound_proxy(&self, points: &[Estimate]) -> f64 {
        let sup_phi = self.phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup_q = points.iter().fold(0.0f64, |m, e| m.max(e.value.abs()));
        if sup_phi > 0.0 {
            sup_q / sup_phi
        } else {
            0.0
        }
    }

    pub fn divergence_curve(&self, r_grid: &[f64], form: DivergenceForm) -> DensityCurve {
        let points: Vec<Estimate> = r_grid
            .iter()
            .map(|&r| self.divergence_at(r, form))
            .collect();
        DensityCurve {
            r: r_grid.to_vec(),
            estimate: points.iter().map(|e| e.value).collect(),
            stderr: points.iter().map(|e| e.stderr).collect(),
            estimator: EstimatorKind::Divergence,
            excluded_fraction: self.excluded_fraction(),
            n: self.n,
            seed: self.seed,
            epsilon: None,
            bound_proxy: self.bound_proxy(&points),
            unresolved: vec![false; r_grid.len()],
            variance_unreliable: self.variance_unreliable(),
        }
    }

    pub fn mollified_curve(&self, r_grid: &[f64], eps: f64) -> DensityCurve {
        let points: Vec<(Estimate, bool)> =
            r_grid.iter().map(|&r| self.mollified_at(r, eps)).collect();
        DensityCurve {
            r: r_grid.to_vec(),
            estimate: points.iter().map(|e| e.0.value).collect(),
            stderr: points.iter().map(|e| e.0.stderr).collect(),
            estimator: EstimatorKind::Mollified,
            excluded_fraction: 0.0,
            n: self.n,
            seed: self.seed,
            epsilon: Some(eps),
            bound_proxy: self.bound_proxy(&points.iter().map(|e| e.0).collect::<Vec<_>>()),
            unresolved: points.iter().map(|e| e.1).collect(),
            variance_unreliable: self.variance_unreliable(),
        }
    }
}

/// Batch-means estimate of `E[f(ξ)]` on the sample stream `(n, seed)`.
/// `f` receives the global sample index and the point.
pub fn mc_mean<F>(model: &GaussianModel, n: usize, seed: u64, f: F) -> Result<Estimate>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let d = model.dim();
    let parts: Vec<Result<(f64, f64, usize)>> = model.map_chunks(n, seed, |chunk, pts| {
        let mut s = 0.0;
        let mut sq = 0.0;
        let mut len = 0;
        for (i, xi) in pts.chunks_exact(d).enumerate() {
            let index = chunk * rng::CHUNK_SIZE + i;
            let y = f(index, xi);
            if !y.is_finite() {
                return Err(Error::numerical(
                    format!("sample {index}"),
                    format!("integrand {y}"),
                ));
            }
            s += y;
            sq += y * y;
            len += 1;
        }
        Ok((s, sq, len))
    });
    let mut sums = crate::stats::ChunkSums::with_capacity(parts.len());
    for p in parts {
        let (s, sq, c) = p?;
        sums.push(s, sq, c);
    }
    Ok(sums.estimate())
}

/// Run a job and return one curve per requested estimator (divergence first).
pub fn run_density(job: &DensityJob) -> Result<Vec<DensityCurve>> {
    job.validate()?;
    let table = SampleTable::build(
        &job.model,
        &job.g,
        &job.phi,
        job.n,
        job.seed,
        job.estimator.wants_divergence(),
        job.floor,
    )?;
    let mut out = Vec::new();
    if job.estimator.wants_divergence() {
        out.push(table.divergence_curve(&job.r_grid, job.form));
    }
    if matches!(
        job.estimator,
        EstimatorKind::Mollified | EstimatorKind::Both
    ) {
        let eps = job.epsilon.unwrap_or_else(|| table.default_epsilon());
        out.push(table.mollified_curve(&job.r_grid, eps));
    }
    Ok(out)
}

pub fn density_divergence(job: &DensityJob) -> Result<DensityCurve> {
    let job = job.clone().with_estimator(EstimatorKind::Divergence);
    Ok(run_density(&job)?.remove(0))
}

pub fn density_mollified(job: &DensityJob) -> Result<DensityCurve> {
    let job = job.clone().with_estimator(EstimatorKind::Mollified);
    Ok(run_density(&job)?.remove(0))
}

/// `F_φ(r) = ∫_{G<r} φ dμ` with its standard error.
pub fn cdf_estimate(
    model: &GaussianModel,
    g: &FunctionalOracle,
    phi: &FunctionalOracle,
    r: f64,
    n: usize,
    seed: u64,
) -> Result<Estimate> {
    let table = SampleTable::build(model, g, phi, n, seed, false, DEFAULT_GRADIENT_FLOOR)?;
    Ok(table.cdf(r))
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessReport {
    pub r: Vec<f64>,
    /// `(F(r+h) − F(r−h))/(2h)` on shared samples.
    pub difference_quotient: Vec<Estimate>,
    pub divergence: Vec<Estimate>,
    /// Max over the grid of `|quotient − divergence|` in combined-error units.
    pub max_discrepancy: f64,
    /// Max over neighbouring grid points of `|q(r_{i+1}) − q(r_i)|` in
    /// combined-error units.
    pub max_jump: f64,
    pub h: f64,
}

pub fn smoothness_check(
    model: &GaussianModel,
    g: &FunctionalOracle,
    phi: &FunctionalOracle,
    r_grid: &[f64],
    n: usize,
    seed: u64,
    h: f64,
) -> Result<SmoothnessReport> {
    if !(h > 0.0) {
        return Err(Error::Argument("h must be positive".into()));
    }
    let table = SampleTable::build(model, g, phi, n, seed, true, DEFAULT_GRADIENT_FLOOR)?;
    let mut quotient = Vec::with_capacity(r_grid.len());
    let mut divergence = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let lo = r - h;
        let hi = r + h;
        quotient.push(table.mean_of(|i| {
            let g = table.g[i];
            if g >= lo && g < hi {
                table.phi[i] / (2.0 * h)
            } else {
                0.0
            }
        }));
        divergence.push(table.divergence_at(r, DivergenceForm::Balanced));
    }
    let z = |a: &Estimate, b: &Estimate| a.z_against(b).unwrap_or(0.0);
    let max_discrepancy = quotient
        .iter()
        .zip(&divergence)
        .map(|(a, b)| z(a, b))
        .fold(0.0, f64::max);
    let max_jump = divergence
        .windows(2)
        .map(|w| z(&w[0], &w[1]))
        .fold(0.0, f64::max);
    Ok(SmoothnessReport {
        r: r_grid.to_vec(),
        difference_quotient: quotient,
        divergence,
        max_discrepancy,
        max_jump,
        h,
    })
}
