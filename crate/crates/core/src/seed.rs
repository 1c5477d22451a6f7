//! Seed derivation for reproducible parallel simulation.
//!
//! Every independent random stream is keyed by a tuple of integers derived from
//! the master seed, so results never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a key.
pub fn derive(parent: u64, key: u64) -> u64 {
    mix(parent ^ mix(key))
}

/// Seed for a rate point, derived from the rate's bit pattern so that
/// reordering a sweep does not change any individual point.
pub fn for_rate(master: u64, rate: f64) -> u64 {
    derive(master, rate.to_bits())
}

/// Stream used for arrival times.
pub const ARRIVAL_STREAM: u64 = 0;
/// Stream used for detection decisions.
pub const DECISION_STREAM: u64 = 1;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
