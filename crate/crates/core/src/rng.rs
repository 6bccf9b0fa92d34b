//! Reproducible random streams.
//!
//! Every stochastic component draws from ChaCha8, a counter-based stream
//! cipher generator: the 64-bit master seed is expanded into the 256-bit key
//! and a separate 64-bit stream id selects an independent keystream. Streams
//! are therefore addressable by `(seed, stream)` without sequencing state
//! between samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes two identifiers into one stream id (splitmix64 finaliser).
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_add(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
