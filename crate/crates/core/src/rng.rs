//! Seed handling. Every stochastic stage takes a plain `u64` seed; child seeds
//! are derived with splitmix64 so that replicate `r` of a run always sees the
//! same stream no matter how the work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for `(parent, stream)`.
#[inline]
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Uniform on [0, 1) keyed by (seed, iteration, unit). Used for per-unit class
/// draws so results do not depend on row order.
#[inline]
pub fn keyed_uniform(seed: u64, iteration: u64, unit: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(iteration ^ splitmix64(unit ^ 0xD1B5_4A32_D192_ED03)));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
