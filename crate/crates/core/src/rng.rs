//! Seed derivation.
//!
//! Every stochastic draw in the library is made from a generator seeded by
//! mixing a global seed with a path of stream identifiers (epoch, iteration,
//! sample index, ...). Work can then be reordered or parallelised without
//! changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `seed` with each element of `path` into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A generator for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags, so that different consumers of the same seed never share draws.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const BATCH: u64 = 0x2;
    pub const AUGMENT: u64 = 0x3;
    pub const SPLIT: u64 = 0x4;
    pub const FEW_SHOT: u64 = 0x5;
    pub const SHUFFLE: u64 = 0x6;
    pub const SYNTHETIC: u64 = 0x7;
    pub const HEAD_INIT: u64 = 0x8;
}
