//! Hierarchically seeded random streams.
//!
//! A stream is identified by a root seed and a slash-separated path such as
//! `run/dataset/case/instance/scheme/step`. The path and root are hashed
//! into a 64-bit seed that is expanded by SplitMix64 into xoshiro256**
//! state, so the same path always yields the same stream no matter which
//! thread or order it is created in.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct SeededRng {
    root: u64,
    path: String,
    inner: Xoshiro256StarStar,
}

fn derive_seed(root: u64, path: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(path.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl SeededRng {
    pub fn new(root: u64, path: impl Into<String>) -> Self {
        let path = path.into();
        let inner = Xoshiro256StarStar::seed_from_u64(derive_seed(root, &path));
        Self { root, path, inner }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Independent stream at `self.path/segment`. Does not advance `self`.
    pub fn child(&self, segment: impl std::fmt::Display) -> Self {
        let path = if self.path.is_empty() {
            segment.to_string()
        } else {
            format!("{}/{}", self.path, segment)
        };
        Self::new(self.root, path)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform in `[0, n)`. Panics on `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform in `[-k, k]`.
    pub fn symmetric(&mut self, k: i64) -> i64 {
        self.inner.random_range(-k..=k)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// `k` distinct indices from `0..n` (all of them, shuffled, if `k >= n`).
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec()
    }
}
