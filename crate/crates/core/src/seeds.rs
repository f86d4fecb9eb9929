//! Deterministic derivation of independent child seeds from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of tags into a child seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng_from(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags, kept in one place so that paired runs line up.
pub mod stream {
    pub const SCENARIO: u64 = 1;
    pub const TRAINING_DATA: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const CLICKS: u64 = 4;
    pub const DITHER: u64 = 5;
    pub const EXPLORE: u64 = 6;
    pub const NAIVE_SENSITIVITY: u64 = 7;
    pub const TRIAL: u64 = 8;
}
