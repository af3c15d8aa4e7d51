//! Seed derivation. One master seed fans out into independent sub-streams so
//! that every scheduler in a paired comparison sees the same target stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Sub-stream tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Truth = 1,
    Draft = 2,
    TieBreak = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` under `master`: `splitmix64(master ^ splitmix64(tag))`.
pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(master ^ splitmix64(stream as u64))
}

pub fn stream_rng(master: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream))
}

/// Stateless 64-bit mix of several words, used for hashed lookup tables.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &w| splitmix64(acc ^ w))
}
