//! Seed derivation. Every random stream in the simulator is a ChaCha8 stream
//! keyed by a root seed and a list of integer tags, so that independent
//! stages never share or reorder draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stage tags, kept in one place so two stages never collide.
pub mod tag {
    pub const SBM: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const PGD: u64 = 5;
    pub const SHADOW: u64 = 6;
    pub const ATTACK_TRAIN: u64 = 7;
    pub const EVAL_PAIRS: u64 = 8;
    pub const DEFENSE: u64 = 9;
    pub const AUC_CUS: u64 = 10;
    pub const SURROGATE: u64 = 11;
}
