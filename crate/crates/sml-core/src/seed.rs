//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from a ChaCha stream whose seed
//! is derived from the master seed and a purpose tag, so per-agent work can
//! fan out across threads without affecting reproducibility.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` for the stream named by `tag` and `index`.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = master;
    for b in tag.as_bytes() {
        h = mix(h ^ u64::from(*b));
    }
    mix(h ^ index)
}

/// RNG for the stream named by `tag` and `index`, derived from `master`.
pub fn rng(master: u64, tag: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, tag, index))
}
