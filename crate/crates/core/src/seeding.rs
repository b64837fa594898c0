//! Deterministic random streams. Every consumer derives its generator from a
//! `(seed, stream)` pair so that independent stages never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_SPLIT: u64 = 3;
pub const STREAM_SHARDS: u64 = 4;
pub const STREAM_ATTACK: u64 = 5;
pub const STREAM_BASELINE: u64 = 6;
pub const STREAM_TARGETS: u64 = 7;
pub const STREAM_SUBSAMPLE: u64 = 8;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, e.g. for restart `r` or shard `k`.
pub fn derive(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
