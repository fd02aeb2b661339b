//! Labelled, seeded random streams.
//!
//! A stream is keyed by `(seed, label)`: the pair is hashed with SHA-256 into
//! the 256-bit key of a ChaCha20 generator, so the same pair yields the same
//! draws on every platform and distinct labels yield unrelated streams.
//! Parallel work derives one child stream per task with [`RandomStream::derive`]
//! instead of sharing a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    label: String,
    rng: ChaCha20Rng,
}

impl RandomStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            seed,
            label,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    /// Child stream labelled `"<label>/<child>"`, independent of how many draws
    /// the parent has already made.
    pub fn derive(&self, child: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.label, child))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_range(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    pub fn poisson(&mut self, mean: f64) -> f64 {
        if mean <= 0.0 {
            return 0.0;
        }
        // Poisson::new only fails for non-positive or non-finite means.
        Poisson::new(mean)
            .map(|d| d.sample(&mut self.rng))
            .unwrap_or(0.0)
    }

    /// `amount` distinct indices from `0..length`, in draw order.
    pub fn sample_indices(&mut self, length: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, length, amount).into_vec()
    }
}

/// Source of standard-normal draws. The sampler and the diffusion routines take
/// this rather than a concrete stream so tests can inject a zero draw.
pub trait NormalSource {
    fn fill_normal(&mut self, out: &mut [f64]);
}

impl NormalSource for RandomStream {
    fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}

/// A "random" source that always draws zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl NormalSource for ZeroNoise {
    fn fill_normal(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `n` standard-normal draws from `stream`.
pub fn draw_gaussian(stream: &mut RandomStream, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    stream.fill_normal(&mut out);
    out
}
