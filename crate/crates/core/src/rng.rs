//! Seed derivation. Every random quantity in the crate is drawn from a ChaCha
//! stream addressed by `(seed, stream)`, so results never depend on how work
//! is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

// Domain tags keep independent consumers of one user seed apart.
pub(crate) const TAG_MC: u64 = 0x4d43_0001;
pub(crate) const TAG_MC_OUTER: u64 = 0x4d43_0002;
pub(crate) const TAG_UNCOND: u64 = 0x5350_0001;
pub(crate) const TAG_COND: u64 = 0x5350_0002;
pub(crate) const TAG_COND_MC: u64 = 0x5350_0003;
pub(crate) const TAG_UNCOND_MC: u64 = 0x5350_0004;
pub(crate) const TAG_TRAIN: u64 = 0x5452_0001;
pub(crate) const TAG_INIT: u64 = 0x4e49_0001;
pub(crate) const TAG_DATA: u64 = 0x4441_0001;
pub(crate) const TAG_PAIRS: u64 = 0x5041_0001;
pub(crate) const TAG_LADDER: u64 = 0x4c41_0001;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.rotate_left(17))
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
