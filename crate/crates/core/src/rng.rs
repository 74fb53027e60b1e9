//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed and builds a
//! [`ChaCha8Rng`] from it. Independent sub-streams (restart chains, forest
//! trees, folds) are derived with [`derive_seed`], so that parallel and serial
//! execution consume identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for sub-stream `stream` of `seed`: `seed ^ mix64(stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ mix64(stream)
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tags separating the top-level streams of one experiment.
pub mod tag {
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const VALIDATION: u64 = 0x5641_4c49;
    pub const BAYES: u64 = 0x4241_5945;
    pub const FOREST: u64 = 0x464f_5245;
    pub const TEST_SPLIT: u64 = 0x5445_5354;
}
