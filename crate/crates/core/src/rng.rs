//! Deterministic random number generation.
//!
//! Every sampling and training procedure in this crate draws from
//! [`DetRng`], a thin wrapper around the ChaCha8 stream cipher RNG
//! (`rand_chacha::ChaCha8Rng`). The algorithm is pinned by name and the
//! derived operations below (index generation, shuffling, normal variates)
//! are implemented in this module from raw `u64` output, so results stay
//! stable across releases of the `rand` ecosystem:
//!
//! * seeding: `ChaCha8Rng::seed_from_u64(seed)` with the word stream set to
//!   `fnv1a64(domain)`, giving independent named substreams of one seed;
//! * uniform indices: unbiased rejection sampling over `next_u64`;
//! * shuffling: Fisher–Yates, iterating from the last element down;
//! * normals: Box–Muller transform on two uniform draws.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 64-bit FNV-1a over a byte string. Used to map substream names to
/// ChaCha stream numbers and words to token buckets.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic RNG with named substreams.
pub struct DetRng {
    inner: ChaCha8Rng,
}

impl DetRng {
    /// Root stream for a seed.
    pub fn new(seed: u64) -> Self {
        Self::with_domain(seed, "root")
    }

    /// Independent substream of `seed` identified by `domain`.
    pub fn with_domain(seed: u64, domain: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(fnv1a64(domain.as_bytes()));
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform index in `0..n` via rejection sampling (unbiased).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index bound must be positive");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniform in the half-open interval (0, 1]; never returns 0 so it is
    /// safe under `ln`.
    pub fn uniform_open(&mut self) -> f64 {
        // 53 random mantissa bits, shifted into (0, 1].
        let bits = self.next_u64() >> 11;
        (bits as f64 + 1.0) / (1u64 << 53) as f64
    }

    /// Standard normal variate via the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
