//! Seeded random streams.
//!
//! Every randomized operation takes a `u64` seed. The generator is
//! xoshiro256** whose 256-bit state is expanded from the seed with
//! SplitMix64, so streams are reproducible in any language that implements
//! those two published generators. Independent sub-streams are derived with
//! [`derive_seed`], which mixes a stream tag into the parent seed through one
//! SplitMix64 round.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type SeededRng = Xoshiro256StarStar;

pub fn seeded(seed: u64) -> SeededRng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// One SplitMix64 output step applied to `x`.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Stream tags used across the crate, kept in one place so that two
/// components never share a stream by accident.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const INIT: u64 = 3;
    pub const BATCHES: u64 = 4;
    pub const AUX_PROJECTION: u64 = 5;
    pub const HOLDOUT: u64 = 6;
}
