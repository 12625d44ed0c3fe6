//! Deterministic seeding. Every random draw in the crate comes from a
//! `ChaCha8Rng` whose seed is derived from a user seed plus a stream tag, so
//! results depend only on `(seed, shape)` and never on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent sub-stream seed for `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(tag.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Per-grid-point seed used by sweeps: `mix64(mix64(mix64(base) ^ bits(alpha)) ^ bits(delta))`.
/// Independent of the order in which points are visited.
pub fn point_seed(base: u64, alpha: f64, delta: f64) -> u64 {
    mix64(mix64(mix64(base) ^ alpha.to_bits()) ^ delta.to_bits())
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// stream tags
pub(crate) const TAG_WEIGHTS: u64 = 1;
pub(crate) const TAG_LATENT: u64 = 2;
pub(crate) const TAG_NOISE: u64 = 3;
pub(crate) const TAG_PRIOR_U: u64 = 4;
pub(crate) const TAG_INIT: u64 = 5;
pub(crate) const TAG_START: u64 = 6;
pub(crate) const TAG_EIG: u64 = 7;
pub(crate) const TAG_SAMPLES: u64 = 8;
