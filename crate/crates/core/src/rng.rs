//! Seed derivation: every random stream is a pure function of the top-level
//! seed and a stream label, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for `stream` from `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed) ^ splitmix(stream.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Stream labels used across the crate.
pub mod streams {
    pub const SAMPLE: u64 = 1;
    pub const MERGE: u64 = 2;
    pub const MC_ERROR: u64 = 3;
    pub const REJECTION: u64 = 4;
    pub const NORMALIZE: u64 = 5;
    pub const IMAGE: u64 = 6;
    pub const SELECTION: u64 = 7;
    pub const REPEAT: u64 = 8;
}
