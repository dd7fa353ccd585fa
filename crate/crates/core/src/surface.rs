//! Surface measures on level sets, realized through `φ ↦ q_φ(r)`.
//!
//! Nothing here materializes `σ_r^G` as points: every surface integral is a
//! density estimate of `φμ∘G⁻¹` at `r`.

use serde::Serialize;

use crate::density::{mc_mean, DivergenceForm, EstimatorKind, SampleTable};
use crate::error::{Error, Result};
use crate::functional::{
    FunctionalOracle, GaussianCutoff, LevelGeometry, PartialDerivative, Product, Sum,
    DEFAULT_GRADIENT_FLOOR,
};
use crate::gauss_model::GaussianModel;
use crate::quadrature;
use crate::stats::Estimate;

/// Acceptance band in combined standard errors.
pub const BAND_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct SurfaceMeasureHandle {
    pub model: GaussianModel,
    pub g: FunctionalOracle,
    pub r: f64,
    pub n: usize,
    pub seed: u64,
    pub epsilon: Option<f64>,
    /// `Both` resolves to the divergence estimator.
    pub estimator: EstimatorKind,
    pub form: DivergenceForm,
    pub floor: f64,
}

impl SurfaceMeasureHandle {
    pub fn new(model: GaussianModel, g: FunctionalOracle, r: f64) -> Self {
        Self {
            model,
            g,
            r,
            n: 1_000_000,
            seed: 0,
            epsilon: None,
            estimator: EstimatorKind::Divergence,
            form: DivergenceForm::Balanced,
            floor: DEFAULT_GRADIENT_FLOOR,
        }
    }

    pub fn with_samples(mut self, n: usize, seed: u64) -> Self {
        self.n = n;
        self.seed = seed;
        self
    }

    pub fn with_estimator(mut self, e: EstimatorKind) -> Self {
        self.estimator = e;
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = Some(eps);
        self
    }

    pub fn with_form(mut self, form: DivergenceForm) -> Self {
        self.form = form;
        self
    }

    pub fn at(&self, r: f64) -> Self {
        Self { r, ..self.clone() }
    }

    fn mollified(&self) -> bool {
        self.estimator == EstimatorKind::Mollified
    }

    pub fn table(&self, phi: &FunctionalOracle) -> Result<SampleTable> {
        SampleTable::build(
            &self.model,
            &self.g,
            phi,
            self.n,
            self.seed,
            !self.mollified(),
            self.floor,
        )
    }

    /// `∫φ dσ_r^G` with diagnostics.
    pub fn integrate(&self, phi: &FunctionalOracle) -> Result<SurfaceIntegral> {
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::Argument(format!(
                    "epsilon must be positive, got {e}"
                )));
            }
        }
        let table = self.table(phi)?;
        let (estimate, unresolved, epsilon) = if self.mollified() {
            let eps = self.epsilon.unwrap_or_else(|| table.default_epsilon());
            let (e, u) = table.mollified_at(self.r, eps);
            (e, u, Some(eps))
        } else {
            (table.divergence_at(self.r, self.form), false, None)
        };
        Ok(SurfaceIntegral {
            phi: phi.describe(),
            r: self.r,
            estimate,
            unresolved,
            excluded_fraction: table.excluded_fraction(),
            epsilon,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceIntegral {
    pub phi: String,
    pub r: f64,
    pub estimate: Estimate,
    pub unresolved: bool,
    pub excluded_fraction: f64,
    pub epsilon: Option<f64>,
}

pub fn surface_integral(h: &SurfaceMeasureHandle, phi: &FunctionalOracle) -> Result<Estimate> {
    Ok(h.integrate(phi)?.estimate)
}

#[derive(Debug, Clone, Serialize)]
pub struct IbpResidual {
    pub phi: String,
    pub k: usize,
    pub r: f64,
    /// `∫_{G<r} (D_kφ − ξ_kφ) dμ`.
    pub lhs: Estimate,
    /// `∫ φ D_kG dσ_r^G`.
    pub rhs: Estimate,
    pub residual: f64,
    /// Combined standard error of the two sides.
    pub band: f64,
    pub within: bool,
}

fn within_band(diff: f64, band: f64) -> bool {
    diff.abs() <= BAND_SIGMAS * band
}

pub fn ibp_residual(
    h: &SurfaceMeasureHandle,
    phi: &FunctionalOracle,
    k: usize,
) -> Result<IbpResidual> {
    let d = h.model.dim();
    if k == 0 || k > d {
        return Err(Error::IndexOutOfRange { index: k, dim: d });
    }
    phi.check_dim(d)?;
    h.g.check_dim(d)?;
    let g = &h.g;
    let r = h.r;
    let lhs = mc_mean(&h.model, h.n, h.seed, |_, xi| {
        if g.eval(xi) < r {
            let mut grad = vec![0.0; xi.len()];
            phi.gradient_into(xi, &mut grad);
            grad[k - 1] - xi[k - 1] * phi.eval(xi)
        } else {
            0.0
        }
    })?;
    let weighted = FunctionalOracle::new(Product::new(
        phi.clone(),
        FunctionalOracle::new(PartialDerivative::new(g.clone(), k)),
    ));
    let rhs = surface_integral(h, &weighted)?;
    let residual = lhs.value - rhs.value;
    let band = lhs.stderr.hypot(rhs.stderr);
    Ok(IbpResidual {
        phi: phi.describe(),
        k,
        r,
        lhs,
        rhs,
        residual,
        band,
        within: within_band(residual, band),
    })
}

/// The `k`-th component of `D_μ 1_{G<r} = D_kG σ_r^G`, tested against `φ`.
#[derive(Debug, Clone, Serialize)]
pub struct PerimeterRecord {
    pub phi: String,
    pub k: usize,
    pub r: f64,
    /// `⟨D_μ 1_{G<r}, φ e_k⟩`, the volume side.
    pub perimeter_component: Estimate,
    /// `∫ φ D_kG dσ_r^G`.
    pub surface_side: Estimate,
    pub residual: f64,
    pub band: f64,
    pub within: bool,
}

pub fn perimeter_identity_check(
    h: &SurfaceMeasureHandle,
    phi: &FunctionalOracle,
    k: usize,
) -> Result<PerimeterRecord> {
    let res = ibp_residual(h, phi, k)?;
    Ok(PerimeterRecord {
        phi: res.phi,
        k,
        r: res.r,
        perimeter_component: res.lhs,
        surface_side: res.rhs,
        residual: res.residual,
        band: res.band,
        within: res.within,
    })
}

pub const TRACE_SCALES: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    /// Cutoff scale `m` of `φ_m = φ · exp(−|ξ|²/(2m²))`.
    pub m: f64,
    pub value: Estimate,
    /// `q̂_{φ_m}(r) − q̂_φ(r)` on shared samples.
    pub difference: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceDiagnostic {
    pub phi: String,
    pub r: f64,
    /// `∫ φ|_{G⁻¹(r)} dσ_r^G`.
    pub trace_integral: Estimate,
    pub steps: Vec<TraceStep>,
    /// Last difference within the band of the trace integral.
    pub converged: bool,
    /// `|difference|` nonincreasing along the sequence.
    pub monotone: bool,
}

pub fn trace_eval(h: &SurfaceMeasureHandle, phi: &FunctionalOracle) -> Result<TraceDiagnostic> {
    let trace_integral = surface_integral(h, phi)?;
    let mut steps = Vec::with_capacity(TRACE_SCALES.len());
    for &m in &TRACE_SCALES {
        let cut = FunctionalOracle::new(Product::new(
            phi.clone(),
            FunctionalOracle::new(GaussianCutoff { scale: m }),
        ));
        let diff = FunctionalOracle::new(Sum::new(vec![(1.0, cut.clone()), (-1.0, phi.clone())]));
        steps.push(TraceStep {
            m,
            value: surface_integral(h, &cut)?,
            difference: surface_integral(h, &diff)?,
        });
    }
    let last = &steps[steps.len() - 1].difference;
    let converged = within_band(last.value, trace_integral.stderr);
    let monotone = steps
        .windows(2)
        .all(|w| w[1].difference.value.abs() <= w[0].difference.value.abs());
    Ok(TraceDiagnostic {
        phi: phi.describe(),
        r: h.r,
        trace_integral,
        steps,
        converged,
        monotone,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    pub g: String,
    pub r: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub epsilon: f64,
    /// Empirical essential range of `G`.
    pub ess_inf: f64,
    pub ess_sup: f64,
    /// Grid indices strictly inside the range where `q̂_1` is not above the band.
    pub interior_flags: Vec<usize>,
    /// Grid indices outside the range where `q̂_1` is above the band.
    pub exterior_flags: Vec<usize>,
}

impl PositivityReport {
    pub fn ok(&self) -> bool {
        self.interior_flags.is_empty() && self.exterior_flags.is_empty()
    }

    pub fn point(&self, i: usize) -> Estimate {
        Estimate::new(self.estimate[i], self.stderr[i])
    }
}

/// Scan `q̂_1` with the mollified estimator, which needs only values of `G`.
pub fn positivity_scan(
    model: &GaussianModel,
    g: &FunctionalOracle,
    r_grid: &[f64],
    n: usize,
    seed: u64,
    epsilon: Option<f64>,
) -> Result<PositivityReport> {
    if r_grid.is_empty() {
        return Err(Error::Argument("r_grid is empty".into()));
    }
    let one = FunctionalOracle::new(crate::functional::Constant(1.0));
    let table = SampleTable::build(model, g, &one, n, seed, false, DEFAULT_GRADIENT_FLOOR)?;
    let eps = epsilon.unwrap_or_else(|| table.default_epsilon());
    let curve = table.mollified_curve(r_grid, eps);
    let ess_inf = table.g.iter().copied().fold(f64::INFINITY, f64::min);
    let ess_sup = table.g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut interior_flags = Vec::new();
    let mut exterior_flags = Vec::new();
    for (i, &r) in r_grid.iter().enumerate() {
        let above = curve.estimate[i] > BAND_SIGMAS * curve.stderr[i];
        if r > ess_inf && r < ess_sup {
            if !above {
                interior_flags.push(i);
            }
        } else if (r < ess_inf || r > ess_sup) && above {
            exterior_flags.push(i);
        }
    }
    Ok(PositivityReport {
        g: g.describe(),
        r: curve.r,
        estimate: curve.estimate,
        stderr: curve.stderr,
        epsilon: eps,
        ess_inf,
        ess_sup,
        interior_flags,
        exterior_flags,
    })
}

pub const HAUSDORFF_MAX_DIM: usize = 6;
pub const HAUSDORFF_REL_TOL: f64 = 0.01;

#[derive(Debug, Clone, Serialize)]
pub struct HausdorffComparison {
    pub g: String,
    pub phi: String,
    pub r: f64,
    pub dim: usize,
    pub geometry: &'static str,
    pub nodes_per_axis: usize,
    pub quadrature: f64,
    pub surface: Estimate,
    pub relative_error: f64,
    pub relative_stderr: f64,
    /// `|surface − quadrature| ≤ max(1%·|quadrature|, 4·stderr)`.
    pub within: bool,
}

/// Weighted-Hausdorff quadrature of `φ/|D_H G|` over `G⁻¹(r)`.
pub fn level_set_quadrature(
    g: &FunctionalOracle,
    dim: usize,
    r: f64,
    phi: &FunctionalOracle,
) -> Result<(f64, &'static str, usize)> {
    if dim > HAUSDORFF_MAX_DIM {
        return Err(Error::Argument(format!(
            "level-set quadrature supports d ≤ {HAUSDORFF_MAX_DIM}, got {dim}"
        )));
    }
    let nodes = quadrature::nodes_per_axis(dim.saturating_sub(1));
    match g.level_geometry() {
        Some(LevelGeometry::Sphere) => {
            let v = quadrature::sphere_integral(dim, r, nodes, |x| phi.eval(x))?;
            Ok((v, "sphere", nodes))
        }
        Some(LevelGeometry::Hyperplane { weights }) => {
            let v = quadrature::hyperplane_integral(dim, &weights, r, nodes, |x| phi.eval(x))?;
            Ok((v, "hyperplane", nodes))
        }
        None => Err(Error::Argument(format!(
            "no level-set quadrature for {}",
            g.describe()
        ))),
    }
}

pub fn hausdorff_compare(
    h: &SurfaceMeasureHandle,
    phi: &FunctionalOracle,
) -> Result<HausdorffComparison> {
    let d = h.model.dim();
    phi.check_dim(d)?;
    h.g.check_dim(d)?;
    let (quad, geometry, nodes) = level_set_quadrature(&h.g, d, h.r, phi)?;
    let surface = surface_integral(h, phi)?;
    let diff = (surface.value - quad).abs();
    let within = diff <= (HAUSDORFF_REL_TOL * quad.abs()).max(BAND_SIGMAS * surface.stderr);
    Ok(HausdorffComparison {
        g: h.g.describe(),
        phi: phi.describe(),
        r: h.r,
        dim: d,
        geometry,
        nodes_per_axis: nodes,
        quadrature: quad,
        surface,
        relative_error: diff / quad.abs(),
        relative_stderr: surface.stderr / quad.abs(),
        within,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceReport {
    pub g: String,
    pub r: f64,
    pub n: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub total_mass: SurfaceIntegral,
    pub integrals: Vec<SurfaceIntegral>,
    pub residuals: Vec<IbpResidual>,
    pub traces: Vec<TraceDiagnostic>,
    pub comparisons: Vec<HausdorffComparison>,
}

/// What to include in a [`SurfaceReport`] beyond the plain integrals.
#[derive(Debug, Clone, Default)]
pub struct SurfaceReportOptions {
    pub ibp_indices: Vec<usize>,
    pub traces: bool,
    pub hausdorff: bool,
}

pub fn surface_report(
    h: &SurfaceMeasureHandle,
    phis: &[FunctionalOracle],
    opts: &SurfaceReportOptions,
) -> Result<SurfaceReport> {
    let one = FunctionalOracle::new(crate::functional::Constant(1.0));
    let total_mass = h.integrate(&one)?;
    let mut integrals = Vec::new();
    let mut residuals = Vec::new();
    let mut traces = Vec::new();
    let mut comparisons = Vec::new();
    for phi in phis {
        integrals.push(h.integrate(phi)?);
        for &k in &opts.ibp_indices {
            residuals.push(ibp_residual(h, phi, k)?);
        }
        if opts.traces {
            traces.push(trace_eval(h, phi)?);
        }
        if opts.hausdorff {
            comparisons.push(hausdorff_compare(h, phi)?);
        }
    }
    Ok(SurfaceReport {
        g: h.g.describe(),
        r: h.r,
        n: h.n,
        seed: h.seed,
        estimator: h.estimator,
        total_mass,
        integrals,
        residuals,
        traces,
        comparisons,
    })
}
