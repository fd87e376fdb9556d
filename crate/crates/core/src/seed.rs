//! Seed derivation helpers.
//!
//! All randomness in the crate comes from ChaCha8 streams keyed by explicit
//! integers, so any draw can be regenerated in isolation: pattern `i` of a
//! sequence, the noise sample of measurement `i`, the dropout mask of training
//! step `t`. Nothing depends on global RNG state or call order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for stream `stream` of the generator family keyed by `seed`.
///
/// Streams with different ids are independent, and stream `i` can be created
/// without touching streams `0..i`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix two integers into a single derived seed (splitmix64 finalizer).
///
/// Used to key sub-generators, e.g. the dropout mask of step `t` from a
/// network seed.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
