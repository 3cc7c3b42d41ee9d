//! Deterministic random streams keyed by (seed, purpose, indices).
//!
//! Every consumer of randomness derives its own generator from the run
//! seed plus a tuple of counters, so results do not depend on the order
//! in which work items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SPLIT: u64 = 1;
pub const SHUFFLE: u64 = 2;
pub const CENTROIDS: u64 = 3;
pub const EFFECT_SCALE: u64 = 4;
pub const EFFECT_SHIFT: u64 = 5;
pub const NOISE: u64 = 6;
pub const KMEANS: u64 = 7;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for the stream identified by `seed` and `key`.
pub fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &k in key {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0xA5A5_A5A5)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
