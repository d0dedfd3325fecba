//! Seed derivation for reproducible, order-independent randomness.
//!
//! Every random draw in the toolkit comes from a stream derived from
//! (global seed, purpose tag, counter), so parallel workers never share or
//! contend for generator state and results do not depend on scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the purpose tag, then mixed with seed and counter.
fn mix(seed: u64, purpose: &str, counter: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in purpose.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer over the combined state
    let mut x = h ^ seed.rotate_left(17) ^ counter.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Deterministic generator for one (purpose, counter) slot of a seeded run.
pub fn derive_rng(seed: u64, purpose: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, purpose, counter))
}
