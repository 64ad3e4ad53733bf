//! Deterministic seed derivation.
//!
//! Parallel and serial runs must see identical random streams, so every job
//! derives its own seed from the global seed and a stable stream tag instead
//! of sharing one RNG.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a global seed with a sequence of stream tags into a new seed.
pub fn derive(global: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(global ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}

/// Deterministic RNG for the stream identified by `tags` under `global`.
pub fn rng(global: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(global, tags))
}
