//! Seed derivation for per-node, per-iteration random streams.
//!
//! Every stream is keyed by `(seed, node, k)` so draws are independent
//! of scheduling and worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `(seed, node, k)` into a single stream seed.
pub fn stream_seed(seed: u64, node: u64, k: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ splitmix64(node.wrapping_add(0x517c_c1b7_2722_0a95)));
    splitmix64(h ^ splitmix64(k.wrapping_add(0x6c62_272e_07bb_0142)))
}

/// A deterministic generator for the `(seed, node, k)` stream.
pub fn stream_rng(seed: u64, node: usize, k: usize) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_seed(seed, node as u64, k as u64))
}
