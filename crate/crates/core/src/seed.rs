//! Seed derivation. Every random stream in a run is keyed by the master seed
//! plus a stream tag and entity indices, so results never depend on the order
//! in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are part of the determinism contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    Partition = 2,
    Fading = 3,
    LinkNoise = 4,
    Batch = 5,
    ModelInit = 6,
    Synthetic = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and up to three entity indices.
pub fn derive(master: u64, stream: Stream, a: u64, b: u64, c: u64) -> u64 {
    let mut h = splitmix64(master ^ 0x6473_6366_6c00_0000);
    for word in [stream as u64, a, b, c] {
        h = splitmix64(h ^ word);
    }
    h
}

pub fn rng(master: u64, stream: Stream, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, a, b, c))
}
