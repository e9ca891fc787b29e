//! Seed derivation for reproducible parallel streams.
//!
//! Every random stream in the crate is a ChaCha8 generator (a counter-based
//! stream cipher, identical output on every platform) keyed by a 64-bit
//! seed. Child streams never share state with their parent: the child seed is
//! `derive_seed(master, index)`, a SplitMix64-style mix of the two words, so a
//! trial can be replayed in isolation from its index alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let a = mix(master.wrapping_add(GOLDEN));
    mix(a ^ index.wrapping_mul(GOLDEN).rotate_left(17) ^ index)
}

/// Seed for a path of stream indices, e.g. `[n_index, trial]`.
pub fn derive_path(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |s, &i| derive_seed(s, i))
}

pub fn stream_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, index: u64) -> StreamRng {
    stream_rng(derive_seed(master, index))
}
