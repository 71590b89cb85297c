//! Hierarchical seeding.
//!
//! Every random stream in the crate comes from one master seed. Child seeds
//! are derived by hashing `(parent, tag...)` with SplitMix64 finalization, and
//! per-read streams use ChaCha's stream counter so a read's randomness does not
//! depend on which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a path of tags.
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(parent), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Independent generator for read `read` of a sampling call seeded by `seed`.
pub fn read_rng(seed: u64, read: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(read);
    rng
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
