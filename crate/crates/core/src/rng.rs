//! Counter-derived random substreams.
//!
//! Every (seed, chunk, coordinate) triple owns an independent ChaCha8
//! stream keyed by a SplitMix64-style hash of the triple. Sample `i` of chunk
//! `c` therefore does not depend on how many workers produced the batch, and
//! coordinate `k` of a sample does not depend on the model dimension, so
//! nested truncation levels share their leading coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Number of samples per chunk. Chunks are the unit of parallel work and of
/// batch-means error estimation.
pub const CHUNK_SIZE: usize = 4096;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of the substream for one chunk and coordinate.
pub fn substream_key(seed: u64, chunk: u64, coord: u64) -> u64 {
    let a = splitmix(seed);
    let b = splitmix(a ^ chunk.wrapping_mul(GOLDEN));
    splitmix(b ^ coord.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Key recorded per chunk in a [`crate::SampleBatch`].
pub fn chunk_key(seed: u64, chunk: u64) -> u64 {
    substream_key(seed, chunk, u64::MAX)
}

/// Number of chunks needed for `n` samples.
pub fn chunk_count(n: usize) -> usize {
    n.div_ceil(CHUNK_SIZE)
}

/// Range of sample indices covered by `chunk`.
pub fn chunk_range(n: usize, chunk: usize) -> std::ops::Range<usize> {
    let lo = chunk * CHUNK_SIZE;
    lo..(lo + CHUNK_SIZE).min(n)
}

/// Fill `out` (row-major, `len × dim`) with standard normals for `chunk`.
pub fn fill_chunk(seed: u64, chunk: usize, dim: usize, len: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), len * dim);
    for k in 0..dim {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_key(seed, chunk as u64, k as u64));
        for i in 0..len {
            out[i * dim + k] = StandardNormal.sample(&mut rng);
        }
    }
}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BASE: usize = 32;
    if values.len() <= BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
