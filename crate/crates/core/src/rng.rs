//! Seeded random streams.
//!
//! Every random draw in the crate goes through a ChaCha stream keyed by a
//! seed derived from the run's base seed plus a path of indices (trial,
//! layer, block, ...). The same path always yields the same stream, so
//! parallel and serial schedules agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type SeededRng = ChaCha20Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each index in `path` into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x51))))
}

pub fn stream(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Uniform draw on (0, 1].
#[inline]
pub fn unit_open_closed(rng: &mut SeededRng) -> f64 {
    1.0 - rng.gen::<f64>()
}
