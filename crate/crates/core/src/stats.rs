//! Monte-Carlo means with batch-means standard errors.

use serde::Serialize;

use crate::rng::pairwise_sum;

/// Below this many chunks the standard error falls back to the per-sample
/// variance.
pub const MIN_BATCHES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }

    /// `|self − other|` in units of the combined error, `None` when both
    /// errors are zero.
    pub fn z_against(&self, other: &Estimate) -> Option<f64> {
        let band = self.stderr.hypot(other.stderr);
        if band > 0.0 {
            Some((self.value - other.value).abs() / band)
        } else {
            None
        }
    }
}

/// Per-chunk partial sums of one integrand.
#[derive(Debug, Clone, Default)]
pub struct ChunkSums {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub count: Vec<usize>,
}

impl ChunkSums {
    pub fn with_capacity(chunks: usize) -> Self {
        Self {
            sum: Vec::with_capacity(chunks),
            sum_sq: Vec::with_capacity(chunks),
            count: Vec::with_capacity(chunks),
        }
    }

    pub fn push(&mut self, sum: f64, sum_sq: f64, count: usize) {
        self.sum.push(sum);
        self.sum_sq.push(sum_sq);
        self.count.push(count);
    }

    pub fn estimate(&self) -> Estimate {
        batch_estimate(&self.sum, &self.sum_sq, &self.count)
    }
}

/// Mean over all samples with a batch-means standard error. Chunks of
/// unequal size are weighted by their share of the samples.
pub fn batch_estimate(sums: &[f64], sums_sq: &[f64], counts: &[usize]) -> Estimate {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Estimate::new(f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = pairwise_sum(sums) / nf;
    let batches = counts.iter().filter(|&&c| c > 0).count();
    let var_of_mean = if batches >= MIN_BATCHES {
        let terms: Vec<f64> = sums
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| {
                let w = c as f64 / nf;
                let dev = s / c as f64 - mean;
                w * w * dev * dev
            })
            .collect();
        let b = batches as f64;
        b / (b - 1.0) * pairwise_sum(&terms)
    } else if n > 1 {
        let second = pairwise_sum(sums_sq) / nf;
        ((second - mean * mean).max(0.0)) / (nf - 1.0)
    } else {
        0.0
    };
    Estimate::new(mean, var_of_mean.max(0.0).sqrt())
}

/// Mean and standard error of a plain slice of samples.
pub fn sample_estimate(values: &[f64]) -> Estimate {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    batch_estimate(
        &[pairwise_sum(values)],
        &[pairwise_sum(&sq)],
        &[values.len()],
    )
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_means_with_equal_chunks() {
        // chunk means 1, 3 repeated; B = 16
        let counts = vec![10usize; 16];
        let sums: Vec<f64> = (0..16)
            .map(|i| if i % 2 == 0 { 10.0 } else { 30.0 })
            .collect();
        let sq = vec![0.0; 16];
        let e = batch_estimate(&sums, &sq, &counts);
        assert_eq!(e.value, 2.0);
        // Σ (m_c − m)² / (B(B−1)) = 16 / 240
        assert!((e.stderr - (16.0f64 / 240.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn few_chunks_fall_back_to_sample_variance() {
        let e = sample_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        // sample variance 5/3 over n = 4
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_is_nan() {
        assert!(batch_estimate(&[], &[], &[]).value.is_nan());
    }

    #[test]
    fn quantiles() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.25), 1.0);
        assert_eq!(quantile_sorted(&v, 0.1), 0.4);
    }
}
