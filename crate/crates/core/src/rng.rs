//! Deterministic seeding helpers.
//!
//! Every stochastic operation in the crate draws from a [`ChaCha8Rng`] keyed
//! by an explicit 64-bit seed, so results are a pure function of
//! `(seed, parameters)` regardless of platform or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Build the crate-wide RNG from a 64-bit seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 output function. Used to derive independent sub-seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for sub-stream `stream` of the root seed.
///
/// Distinct `(seed, stream)` pairs map to distinct, statistically independent
/// seeds; the map is deterministic.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}
