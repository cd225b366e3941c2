//! Counter-based, splittable randomness.
//!
//! Every stream is a ChaCha8 keystream keyed by the run seed and selected by
//! a 64-bit stream id, so the values drawn from stream `k` never depend on
//! how many other streams exist or in which order they are consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Mat, Real};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position in the keystream, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Independent child stream; deterministic in `(seed, stream_id, tag)`.
    pub fn split(&self, tag: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed ^ self.stream_id.rotate_left(17), tag), tag)
    }

    pub fn standard_normal<T: Real>(&mut self) -> T {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        T::lit(z)
    }

    pub fn normal_vec<T: Real>(&mut self, len: usize) -> Vec<T> {
        (0..len).map(|_| self.standard_normal()).collect()
    }

    /// Uniform index in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        // Lemire's multiply-shift; bias is below 2^-32 for the sizes used here.
        ((self.inner.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 mix of a seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` draws of `mean + L z`, `z ~ N(0, I_r)`, one per row.
pub fn gaussian_sample<T: Real>(
    mean: &[T],
    cov_factor: &Mat<T>,
    count: usize,
    rng: &mut RngStream,
) -> Mat<T> {
    let d = mean.len();
    debug_assert_eq!(cov_factor.rows(), d);
    let r = cov_factor.cols();
    let mut out = Mat::zeros(count, d);
    for s in 0..count {
        let z: Vec<T> = rng.normal_vec(r);
        let row = out.row_mut(s);
        for i in 0..d {
            let lz = super::dot(cov_factor.row(i), &z);
            row[i] = mean[i] + lz;
        }
    }
    out
}
