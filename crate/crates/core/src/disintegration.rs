//! Empirical disintegration of `μ` along `G`: samples binned by their
//! `G`-value, each bin standing in for the conditional measure `m_s`.

use serde::Serialize;

use crate::density::SampleTable;
use crate::error::{Error, Result};
use crate::functional::{Constant, FunctionalOracle};
use crate::gauss_model::GaussianModel;
use crate::rng::pairwise_sum;
use crate::stats::{quantile_sorted, sample_estimate, Estimate};
use crate::surface::{SurfaceMeasureHandle, BAND_SIGMAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Edges at empirical quantiles of `G`.
    #[default]
    Quantile,
    /// Equal widths over the empirical range of `G`.
    FixedWidth,
}

impl Binning {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quantile" => Some(Self::Quantile),
            "fixed_width" => Some(Self::FixedWidth),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Quantile => "quantile",
            Self::FixedWidth => "fixed_width",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalDisintegration {
    pub g: String,
    pub n: usize,
    pub seed: u64,
    pub binning: Binning,
    /// `bins + 1` nondecreasing edges; bin `b` is `[edges[b], edges[b+1])`,
    /// the last bin closed.
    pub edges: Vec<f64>,
    /// Sample indices per bin.
    pub members: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub empty: Vec<bool>,
    /// `G` at every sample, in sample order.
    #[serde(skip)]
    pub g_values: Vec<f64>,
}

impl EmpiricalDisintegration {
    pub fn bins(&self) -> usize {
        self.members.len()
    }

    pub fn count(&self, b: usize) -> usize {
        self.members[b].len()
    }

    pub fn width(&self, b: usize) -> f64 {
        self.edges[b + 1] - self.edges[b]
    }

    /// Binomial standard error of a bin weight.
    pub fn weight_stderr(&self, b: usize) -> f64 {
        let w = self.weights[b];
        (w * (1.0 - w) / self.n as f64).sqrt()
    }

    /// Bin holding `r`, or `None` outside the edges.
    pub fn bin_of(&self, r: f64) -> Option<usize> {
        let last = self.bins() - 1;
        if r < self.edges[0] || r > self.edges[last + 1] {
            return None;
        }
        let b = self.edges[1..last + 1].partition_point(|&e| e <= r);
        Some(b.min(last))
    }

    /// Conditional mean of `values` (one per sample) over bin `b`.
    pub fn conditional_mean(&self, b: usize, values: &[f64]) -> Option<Estimate> {
        if self.members[b].is_empty() {
            return None;
        }
        let v: Vec<f64> = self.members[b].iter().map(|&i| values[i]).collect();
        Some(sample_estimate(&v))
    }
}

/// Bin `n` samples of `G` into `bins` bins.
pub fn disintegrate(
    g: &FunctionalOracle,
    model: &GaussianModel,
    n: usize,
    seed: u64,
    bins: usize,
    binning: Binning,
) -> Result<EmpiricalDisintegration> {
    if bins < 2 {
        return Err(Error::Argument(format!(
            "bins must be at least 2, got {bins}"
        )));
    }
    if n < bins {
        return Err(Error::Argument(format!("n = {n} is below bins = {bins}")));
    }
    let one = FunctionalOracle::new(Constant(1.0));
    let table = SampleTable::build(model, g, &one, n, seed, false, 0.0)?;
    let g_values = table.g;
    let mut sorted = g_values.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let edges: Vec<f64> = match binning {
        Binning::Quantile => (0..=bins)
            .map(|b| match b {
                0 => lo,
                b if b == bins => hi,
                b => quantile_sorted(&sorted, b as f64 / bins as f64),
            })
            .collect(),
        Binning::FixedWidth => (0..=bins)
            .map(|b| match b {
                b if b == bins => hi,
                b => lo + (hi - lo) * b as f64 / bins as f64,
            })
            .collect(),
    };
    let mut members = vec![Vec::new(); bins];
    for (i, &v) in g_values.iter().enumerate() {
        let b = edges[1..bins].partition_point(|&e| e <= v);
        members[b].push(i);
    }
    let weights: Vec<f64> = members.iter().map(|m| m.len() as f64 / n as f64).collect();
    let empty = members.iter().map(|m| m.is_empty()).collect();
    Ok(EmpiricalDisintegration {
        g: g.describe(),
        n,
        seed,
        binning,
        edges,
        members,
        weights,
        empty,
        g_values,
    })
}

/// Evaluate `φ` on the samples behind `d`.
pub fn phi_values(
    d: &EmpiricalDisintegration,
    model: &GaussianModel,
    phi: &FunctionalOracle,
) -> Result<Vec<f64>> {
    let table = SampleTable::build(model, phi, phi, d.n, d.seed, false, 0.0)?;
    Ok(table.phi)
}

#[derive(Debug, Clone, Serialize)]
pub struct TowerRecord {
    pub phi: String,
    /// `Σ_b λ_b · mean_b(φ)`.
    pub tower: f64,
    /// Plain sample mean of `φ`.
    pub direct: f64,
    /// `|tower − direct|` over `max(|direct|, mean |φ|)`.
    pub relative_error: f64,
}

pub const TOWER_TOLERANCE: f64 = 1e-12;

impl TowerRecord {
    pub fn exact(&self) -> bool {
        self.relative_error <= TOWER_TOLERANCE
    }
}

pub fn verify_disintegration(
    d: &EmpiricalDisintegration,
    model: &GaussianModel,
    phi: &FunctionalOracle,
) -> Result<TowerRecord> {
    let values = phi_values(d, model, phi)?;
    let direct = pairwise_sum(&values) / d.n as f64;
    let terms: Vec<f64> = (0..d.bins())
        .filter_map(|b| {
            d.conditional_mean(b, &values)
                .map(|m| d.weights[b] * m.value)
        })
        .collect();
    let tower = pairwise_sum(&terms);
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let scale = direct.abs().max(pairwise_sum(&abs) / d.n as f64);
    let relative_error = if scale > 0.0 {
        (tower - direct).abs() / scale
    } else {
        (tower - direct).abs()
    };
    Ok(TowerRecord {
        phi: phi.describe(),
        tower,
        direct,
        relative_error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportRecord {
    /// Max over occupied bins of `range(G over bin) − width`.
    pub max_excess: f64,
    /// Max in-bin range of `G`.
    pub max_range: f64,
    pub occupied: usize,
    pub tolerance: f64,
    pub contained: bool,
}

pub fn support_check(d: &EmpiricalDisintegration, tolerance: f64) -> SupportRecord {
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_range: f64 = 0.0;
    let mut occupied = 0;
    for (b, m) in d.members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        occupied += 1;
        let (lo, hi) = m
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(d.g_values[i]), hi.max(d.g_values[i]))
            });
        let range = hi - lo;
        max_range = max_range.max(range);
        max_excess = max_excess.max(range - d.width(b));
    }
    SupportRecord {
        max_excess,
        max_range,
        occupied,
        tolerance,
        contained: max_excess <= tolerance,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionalRecord {
    pub phi: String,
    pub r: f64,
    pub bin: Option<usize>,
    pub bin_width: f64,
    /// `q̂_1(r)`.
    pub total_mass: Estimate,
    pub conditional_mean: Option<Estimate>,
    /// `q̂_1(r) · mean_bin(φ)`.
    pub conditional_side: f64,
    /// `∫ φ dσ_r^G`.
    pub surface_side: Estimate,
    pub difference: f64,
    /// Combined standard error of both sides.
    pub band: f64,
    /// Discretization allowance from the spread of conditional means over
    /// neighbouring bins.
    pub allowance: f64,
    pub unresolved: bool,
    /// Bin wider than the mollification width of the surface estimator.
    pub bin_wider_than_epsilon: bool,
    pub within: bool,
}

pub fn conditional_vs_surface(
    d: &EmpiricalDisintegration,
    model: &GaussianModel,
    h: &SurfaceMeasureHandle,
    phi: &FunctionalOracle,
) -> Result<ConditionalRecord> {
    let one = FunctionalOracle::new(Constant(1.0));
    let mass = h.integrate(&one)?;
    let total_mass = mass.estimate;
    let surface_side = h.integrate(phi)?.estimate;
    let epsilon = match mass.epsilon {
        Some(e) => e,
        None => h.table(&one)?.default_epsilon(),
    };
    let bin = d.bin_of(h.r).filter(|&b| !d.empty[b]);
    let Some(b) = bin else {
        return Ok(ConditionalRecord {
            phi: phi.describe(),
            r: h.r,
            bin: None,
            bin_width: f64::NAN,
            total_mass,
            conditional_mean: None,
            conditional_side: f64::NAN,
            surface_side,
            difference: f64::NAN,
            band: f64::NAN,
            allowance: f64::NAN,
            unresolved: true,
            bin_wider_than_epsilon: false,
            within: false,
        });
    };
    let values = phi_values(d, model, phi)?;
    let cond = d.conditional_mean(b, &values).expect("occupied bin");
    let neighbours: Vec<f64> = [b.checked_sub(1), Some(b + 1)]
        .into_iter()
        .flatten()
        .filter(|&c| c < d.bins())
        .filter_map(|c| d.conditional_mean(c, &values))
        .map(|m| (m.value - cond.value).abs())
        .collect();
    let spread = neighbours.into_iter().fold(0.0, f64::max);
    let allowance = total_mass.value.abs() * spread;
    let conditional_side = total_mass.value * cond.value;
    let band = (cond.value * total_mass.stderr)
        .hypot(total_mass.value * cond.stderr)
        .hypot(surface_side.stderr);
    let difference = conditional_side - surface_side.value;
    let width = d.width(b);
    Ok(ConditionalRecord {
        phi: phi.describe(),
        r: h.r,
        bin: Some(b),
        bin_width: width,
        total_mass,
        conditional_mean: Some(cond),
        conditional_side,
        surface_side,
        difference,
        band,
        allowance,
        unresolved: false,
        bin_wider_than_epsilon: width > epsilon,
        within: difference.abs() <= BAND_SIGMAS * band + allowance,
    })
}

/// Per-bin summary row for export.
#[derive(Debug, Clone, Serialize)]
pub struct BinSummary {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub weight: f64,
    pub count: usize,
    /// Conditional means per requested `φ`, `None` on empty bins.
    pub cond_mean: Vec<Option<f64>>,
}

pub fn bin_summaries(
    d: &EmpiricalDisintegration,
    model: &GaussianModel,
    phis: &[FunctionalOracle],
) -> Result<Vec<BinSummary>> {
    let values: Vec<Vec<f64>> = phis
        .iter()
        .map(|p| phi_values(d, model, p))
        .collect::<Result<_>>()?;
    Ok((0..d.bins())
        .map(|b| BinSummary {
            bin_lo: d.edges[b],
            bin_hi: d.edges[b + 1],
            weight: d.weights[b],
            count: d.count(b),
            cond_mean: values
                .iter()
                .map(|v| d.conditional_mean(b, v).map(|e| e.value))
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{Coordinate, Norm2};
    use crate::gauss_model::{build_model, ModelDescriptor};

    fn iid(d: usize) -> GaussianModel {
        build_model(&ModelDescriptor::IidGaussian { dim: d }).unwrap()
    }

    #[test]
    fn equiprobable_bins() {
        let m = iid(2);
        let g = FunctionalOracle::new(Coordinate::new(1));
        let d = disintegrate(&g, &m, 100_000, 1, 10, Binning::Quantile).unwrap();
        assert_eq!(d.members.iter().map(|m| m.len()).sum::<usize>(), 100_000);
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for b in 0..10 {
            assert!((d.weights[b] - 0.1).abs() <= 4.0 * d.weight_stderr(b));
        }
    }

    #[test]
    fn degenerate_scale() {
        let m = iid(1);
        let g = FunctionalOracle::new(Coordinate::new(1));
        let d = disintegrate(&g, &m, 2, 3, 2, Binning::Quantile).unwrap();
        assert_eq!(d.count(0), 1);
        assert_eq!(d.count(1), 1);
        assert_eq!(d.weights, vec![0.5, 0.5]);
        assert!(disintegrate(&g, &m, 1, 3, 2, Binning::Quantile).is_err());
        assert!(disintegrate(&g, &m, 10, 3, 1, Binning::Quantile).is_err());
    }

    #[test]
    fn tower_identity_and_support() {
        let m = iid(3);
        let g = FunctionalOracle::new(Norm2);
        for binning in [Binning::Quantile, Binning::FixedWidth] {
            let d = disintegrate(&g, &m, 50_000, 2, 40, binning).unwrap();
            let rec =
                verify_disintegration(&d, &m, &FunctionalOracle::new(Coordinate::new(1))).unwrap();
            assert!(rec.exact(), "{rec:?}");
            let one = verify_disintegration(&d, &m, &FunctionalOracle::new(Constant(1.0))).unwrap();
            assert!((one.direct - 1.0).abs() < 1e-15 && (one.tower - 1.0).abs() < 1e-12);
            assert!(support_check(&d, 0.0).contained);
        }
    }

    #[test]
    fn fixed_width_bins_can_be_empty() {
        let m = iid(1);
        let g = FunctionalOracle::new(Coordinate::new(1));
        let d = disintegrate(&g, &m, 60, 4, 50, Binning::FixedWidth).unwrap();
        assert!(d.empty.iter().any(|&e| e));
        assert!(d
            .empty
            .iter()
            .zip(&d.weights)
            .all(|(&e, &w)| !e || w == 0.0));
    }

    #[test]
    fn single_range_covers_everything() {
        let m = iid(2);
        let g = FunctionalOracle::new(Coordinate::new(1));
        let d = disintegrate(&g, &m, 1000, 5, 2, Binning::FixedWidth).unwrap();
        assert_eq!(d.bin_of(d.edges[0]), Some(0));
        assert_eq!(d.bin_of(d.edges[2]), Some(1));
        assert_eq!(d.bin_of(d.edges[2] + 1.0), None);
    }
}
