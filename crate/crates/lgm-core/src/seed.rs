//! Deterministic sub-seed derivation.
//!
//! All stochastic components take a single master seed. Sub-streams (one per
//! EM iteration and row, per replicate, per fold, ...) are derived by folding
//! role/index tags into the master seed with SplitMix64, so every chain is
//! reproducible and independent of worker scheduling.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finalizer; good 64-bit avalanche.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from `master` by absorbing each tag in order.
///
/// Distinct tag sequences give (with overwhelming probability) unrelated
/// streams; the same sequence always gives the same stream.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &t in tags {
        h = splitmix64(h ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    h
}

/// Seeded RNG used throughout the crate (portable, stream-stable).
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
