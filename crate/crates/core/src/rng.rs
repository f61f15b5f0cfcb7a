//! Seeded, platform-independent random streams.
//!
//! Every stream is a ChaCha8 generator keyed from a 64-bit seed. Integer
//! draws go through 32-bit ranges so results do not depend on pointer width.
//! Parallel work takes child streams via [`RngStream::child`], which derives
//! the child seed from the parent seed and a tag, never from parent state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `tag`-th child of a stream seeded with `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, tag: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform index in `0..n`. `n` must be in `1..=u32::MAX`.
    #[inline]
    pub fn index_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0 && n <= u32::MAX as usize);
        self.rng.random_range(0..n as u32) as usize
    }

    /// Uniform real in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    #[inline]
    pub fn normal_f32(&mut self) -> f32 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Fisher-Yates partial shuffle: `k` distinct indices out of `0..n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index_below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
