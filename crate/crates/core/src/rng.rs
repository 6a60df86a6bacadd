//! Random streams.
//!
//! Every replicate owns one [`SimRng`], a ChaCha stream cipher reduced to
//! 8 rounds and used in counter mode. A stream is fully determined by a
//! 64-bit seed expanded through `SeedableRng::seed_from_u64`. Replicate `k`
//! of a run seeded with `s` uses the seed [`replicate_seed(s, k)`], a
//! SplitMix64 finalizer applied to `s` and `k`, so replicate streams do not
//! depend on scheduling or thread count.
//!
//! Reproducibility is promised per binary. Other implementations can get
//! statistically equivalent streams by using ChaCha8 with the same seed
//! expansion; bitwise equality across languages is not a goal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `k` in a run seeded with `seed`.
pub fn replicate_seed(seed: u64, k: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
