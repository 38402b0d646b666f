//! Seed derivation.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by
//! `(base seed, purpose tag, a, b)`. Streams for different purposes never
//! share state, so e.g. the client sample of round 7 is the same no matter
//! which update strategy the run uses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Hashes `(base, tag, a, b)` into a child seed.
pub fn derive_seed(base: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ fnv1a(tag));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(base, tag, a, b))
}
