//! Deterministic random streams.
//!
//! Every stochastic operation in the crate takes an explicit [`RandomStream`].
//! Streams are cheap to create and derived from a master seed plus a domain
//! label and an index, so independent work items (one attacked image, one
//! training run) each own a private stream whose draws do not depend on
//! scheduling or worker count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer; good avalanche, stateless.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Counter-based deterministic random stream (ChaCha8 core).
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// A root stream for `seed`.
    pub fn new(seed: u64) -> Self {
        Self::from_state(mix64(seed))
    }

    /// An independent stream derived from `(seed, domain, index)`.
    ///
    /// Streams with different domains or indices are statistically
    /// independent, so per-image work can be parallelized without any shared
    /// RNG state.
    pub fn substream(seed: u64, domain: &str, index: u64) -> Self {
        let mut state = mix64(seed);
        state = mix64(state ^ fnv1a(domain));
        state = mix64(state ^ index);
        Self::from_state(state)
    }

    fn from_state(mut state: u64) -> Self {
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        RandomStream {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal scaled to `mean + std * z`.
    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        mean + std * z
    }

    /// True with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `[0, n)`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() on empty range");
        self.rng.random_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}
