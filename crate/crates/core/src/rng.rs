//! Seeded, splittable random streams.
//!
//! Every parallel unit (chain, trial block, Newton seed batch) draws from its
//! own ChaCha stream selected by a stream id, so results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a sub-seed for a named purpose, so that different experiment
/// phases sharing one global seed do not reuse streams.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
