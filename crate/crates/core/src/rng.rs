//! Deterministic RNG stream derivation.
//!
//! Every random draw in the system comes from a ChaCha stream keyed by
//! `(master seed, purpose, index)`, so independent pipeline pieces never share
//! or race a generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping streams disjoint across subsystems.
pub mod purpose {
    pub const DATA_GEN: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const TRAIN_SAMPLING: u64 = 3;
    pub const CHANNEL: u64 = 4;
    pub const REPARAM: u64 = 5;
    pub const AGENT: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const PROJECTOR: u64 = 8;
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic stream for `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let key = mix(mix(seed ^ mix(purpose)) ^ mix(index));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(purpose.wrapping_mul(0x9e3779b9).wrapping_add(index));
    rng
}
