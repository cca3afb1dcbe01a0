//! Deterministic rng-stream derivation.
//!
//! Every random draw in the crate goes through a stream derived from the run
//! seed plus a purpose tag and position indices, so independent trials, steps
//! and passes never share or race a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_INIT: u64 = 0x01;
pub const TAG_BATCH_ORDER: u64 = 0x02;
pub const TAG_DROPOUT: u64 = 0x03;
pub const TAG_ESAM_MASK: u64 = 0x04;
pub const TAG_SHARPNESS: u64 = 0x05;
pub const TAG_SUBSAMPLE: u64 = 0x06;
pub const TAG_DOMAIN_GEN: u64 = 0x07;
pub const TAG_TRIAL: u64 = 0x08;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mix a root seed with tag/index parts into a single derived seed.
pub fn mix(root: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(root);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Deterministic rng for (root seed, tag, indices).
pub fn derived_rng(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(root, parts))
}
