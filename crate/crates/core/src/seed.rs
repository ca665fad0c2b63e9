//! Seeding helpers shared by training and sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed number `index` derived from `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix(base.wrapping_add(mix(index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

pub fn rng_from(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index))
}

/// Stream indices used by the library.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const HARMONIZE: u64 = 3;
    pub const INIT_SAMPLE: u64 = 4;
    pub const CROWD: u64 = 1000;
}
