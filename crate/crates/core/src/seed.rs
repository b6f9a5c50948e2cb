//! Deterministic seed derivation.
//!
//! Every stochastic stage draws from its own ChaCha stream derived from the
//! run seed and a stage path, so parallel fan-out and resumed runs see the
//! same random numbers as a sequential fresh run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// Stage tags used in seed paths.
pub mod stage {
    pub const INIT: u64 = 1;
    pub const WARMUP: u64 = 2;
    pub const MINE: u64 = 3;
    pub const GENERATE: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const AUX: u64 = 6;
}
