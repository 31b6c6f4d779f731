//! Seed derivation for deterministic runs.
//!
//! Every source of randomness in a run (data, population, init, per-node
//! training shuffles, per-node latency jitter) draws from its own ChaCha
//! stream, keyed by the run seed plus a fixed tag. Streams never interleave,
//! so two protocols driven by the same run seed see identical data, initial
//! models, and latency draws regardless of event ordering.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but frozen: changing them changes every
/// seeded artifact.
pub mod tags {
    pub const DATA_TRUTH: u64 = 0x01;
    pub const DATA_NODE: u64 = 0x02;
    pub const DATA_TEST: u64 = 0x03;
    pub const POPULATION: u64 = 0x04;
    pub const MODEL_INIT: u64 = 0x05;
    pub const TRAIN: u64 = 0x06;
    pub const LATENCY: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a tag into a decorrelated sub-seed.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Mix a seed with a tag and a per-entity index (node id, pool slot, ...).
pub fn mix3(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(mix(seed, tag) ^ splitmix64(index.wrapping_add(0xA5A5_A5A5)))
}

/// A fresh ChaCha stream for `(seed, tag)`.
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag))
}

/// A fresh ChaCha stream for `(seed, tag, index)`.
pub fn stream3(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix3(seed, tag, index))
}
