//! Seeded, splittable random streams.
//!
//! Every random draw in the workspace comes from a ChaCha8 generator keyed by
//! `(seed, stream)`. Distinct streams of the same seed are independent, which
//! lets callers hand a private generator to each identity, sample, or frame
//! without threading one mutable generator through everything.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed; used when a component needs its own seed value
/// rather than a generator (e.g. to record it in a manifest).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
