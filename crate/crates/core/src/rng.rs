//! Seeded random streams.
//!
//! Every random draw in the engine goes through [`RngStream`], a thin wrapper
//! over ChaCha8 (`rand_chacha::ChaCha8Rng`). ChaCha8 output is specified
//! independently of the host, so an identical seed and call sequence yields
//! identical draws on every platform.
//!
//! A run has one root seed. Purpose-specific streams (encoding, targets,
//! shuffling, initialization) are derived from it with [`RngStream::derive`],
//! which mixes the root seed, a purpose tag and an index through SplitMix64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the generator backing every stream.
pub const ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Encode,
    Target,
    Shuffle,
    Init,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Encode => 0x656e_636f_6465,
            Purpose::Target => 0x7461_7267_6574,
            Purpose::Shuffle => 0x7368_7566_666c,
            Purpose::Init => 0x696e_6974,
        }
    }
}

/// Pack a phase tag and two counters into one derivation index, so that
/// e.g. `(layer, pass, image)` streams never collide. `major` and `minor`
/// must stay below 2^28.
pub fn stream_index(phase: u8, major: u64, minor: u64) -> u64 {
    debug_assert!(major < 1 << 28 && minor < 1 << 28);
    ((phase as u64) << 56) | (major << 28) | minor
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream for `purpose`, instance `index`, under the run's root seed.
    pub fn derive(root: u64, purpose: Purpose, index: u64) -> Self {
        let s = splitmix64(root ^ splitmix64(purpose.tag() ^ splitmix64(index)));
        RngStream::new(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[-bound, bound)`.
    pub fn symmetric(&mut self, bound: f64) -> f64 {
        (2.0 * self.uniform() - 1.0) * bound
    }

    /// Bernoulli trial with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
