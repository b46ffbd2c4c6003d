//! Deterministic seed derivation.
//!
//! Every random draw in a run comes from a generator keyed by the run seed
//! plus a purpose tag and stage index, so two strategies sharing a seed see
//! identical initial pools and identical stage-0 training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer. Stable across platforms and compiler versions,
/// unlike `std`'s default hasher.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds `parts` into `seed` in order.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

fn tag(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3))
}

/// Generator for `purpose` at `stage` of the run seeded with `seed`.
pub fn stream(seed: u64, purpose: &str, stage: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, &[tag(purpose), stage]))
}

/// Uniform draw in `[0, 1)` that is a pure function of its inputs.
pub fn unit_hash(seed: u64, parts: &[u64]) -> f64 {
    (derive(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}
