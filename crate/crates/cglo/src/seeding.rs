//! Seeded RNG construction and sub-stream derivation.
//!
//! Every random draw in the crate flows through a ChaCha8 generator seeded
//! here, so a run is fully determined by its seed regardless of platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and a stream tag
/// (splitmix64 finalizer; distinct tags give uncorrelated streams).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut x = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
