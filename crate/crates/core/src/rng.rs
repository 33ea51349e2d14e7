//! Deterministic random streams.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream cipher
//! generator (`rand_chacha::ChaCha8Rng`). A stream is identified by a 64-bit
//! seed; the 256-bit ChaCha key is the little-endian concatenation of four
//! successive SplitMix64 outputs started from that seed, and the ChaCha nonce
//! ("stream" in `rand_chacha` terms) is zero unless stated otherwise.
//!
//! Child seeds are derived by folding each path component into the parent
//! with `splitmix64(parent ^ splitmix64(component))`, so
//! `(master, cell, run)` always maps to the same stream regardless of
//! scheduling order.
//!
//! Uniform `f64` draws use the top 53 bits of a `u64` scaled by 2^-53.
//! Gaussian draws use the Box–Muller transform on two uniforms
//! `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`: `z = sqrt(-2 ln u1) · cos(2π u2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// One SplitMix64 output for state `x` (the state increment is applied inside).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent and a path of integer components.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(parent, |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64) -> SimRng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        let word = splitmix64(state);
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    mean + std * gaussian(rng)
}
