//! Deterministic pseudo-random number generation.
//!
//! Every random quantity in this crate flows through [`Rng`], a SplitMix64
//! generator seeded directly with the user-supplied 64-bit seed. The full
//! algorithm is spelled out here so results can be reproduced bit-for-bit in
//! any language:
//!
//! * state update: `state = state + 0x9E3779B97F4A7C15` (wrapping),
//! * output mix: `x ^= x >> 30; x *= 0xBF58476D1CE4E5B9; x ^= x >> 27;
//!   x *= 0x94D049BB133111EB; x ^= x >> 31` (wrapping multiplies),
//! * uniform double in `[0, 1)`: top 53 bits, `(x >> 11) * 2^-53`,
//! * standard normals: Box–Muller on consecutive uniforms,
//!   `z0 = sqrt(-2 ln u1) * cos(2 pi u2)`, `z1 = sqrt(-2 ln u1) * sin(2 pi u2)`,
//!   with `u1` taken from `(0, 1]` as `1 - uniform()`; `z1` is cached and
//!   returned by the next call,
//! * sub-streams: `derive(seed, k)` mixes `seed ^ ((k + 1) * 0x9E3779B97F4A7C15)`
//!   through the same output mix and uses the result as a fresh seed.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

/// Derive an independent child seed for sub-stream `stream` of `seed`.
///
/// Used to give each TT core (and each epoch shuffle) its own stream while
/// keeping everything a pure function of the user seed.
pub fn derive(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
}

/// SplitMix64 stream with Box–Muller normal variates.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    cached_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            cached_normal: None,
        }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform double in `[0, 1)` from the top 53 bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[-a, a]`.
    pub fn uniform_symmetric(&mut self, a: f64) -> f64 {
        (2.0 * self.uniform() - 1.0) * a
    }

    /// Standard normal variate via Box–Muller; consumes two uniforms per pair.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform index in `[0, n)`. `n` must be positive.
    ///
    /// Uses `next_u64() mod n`; the bias is below 2^-32 for every `n` this
    /// crate ever draws and the rule stays trivial to reproduce elsewhere.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher–Yates shuffle, iterating from the last element down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
