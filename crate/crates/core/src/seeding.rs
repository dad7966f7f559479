//! Hierarchical seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream whose
//! seed is derived from the run's master seed and a fixed stream label.
//! Because all seeds are pre-derived, parallel execution cannot change
//! results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels. The values are part of the determinism contract; changing
/// them changes every fitted model.
pub mod stream {
    pub const BOOTSTRAP: u64 = 1;
    pub const NODE: u64 = 2;
    pub const RESTART: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SYNTH_FEATURES: u64 = 5;
    pub const SYNTH_WEIGHTS: u64 = 6;
    pub const SYNTH_NOISE: u64 = 7;
    pub const SYNTH_MISSING: u64 = 8;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and one label.
pub fn derive(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label))
}

/// Derive a child seed from a parent seed and two labels.
pub fn derive2(seed: u64, a: u64, b: u64) -> u64 {
    derive(derive(seed, a), b)
}

/// Deterministic RNG for a derived seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
