//! Seed derivation helpers.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`], which produces
//! the same stream on every platform. Independent sub-streams are derived by
//! mixing a base seed with a purpose tag and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed`, a purpose `tag` and an `index`.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag)) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    rng(derive(seed, tag, index))
}

// Purpose tags; arbitrary but frozen so that runs stay reproducible.
pub(crate) const TAG_SPLIT: u64 = 0x5350_4c49;
pub(crate) const TAG_INJECT: u64 = 0x494e_4a45;
pub(crate) const TAG_SYNTH: u64 = 0x5359_4e54;
pub(crate) const TAG_INIT: u64 = 0x494e_4954;
pub(crate) const TAG_SHUFFLE: u64 = 0x5348_5546;
pub(crate) const TAG_COTEACH_PEER: u64 = 0x5045_4552;
