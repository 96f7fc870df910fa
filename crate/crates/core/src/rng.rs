//! Reproducible random streams.
//!
//! Every stochastic object in the crate draws from a ChaCha8 stream keyed by a
//! 64-bit seed and a 64-bit stream id. ChaCha is counter based, so walker `i`
//! of an ensemble can be reconstructed without touching walkers `0..i`, and the
//! results never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep the different consumers of a master seed apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    FieldRealization = 1,
    InitialState = 2,
    Walker = 3,
    Normalization = 4,
    Experiment = 5,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(master, tag, index)`.
pub fn derive_seed(master: u64, tag: StreamTag, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(tag as u64)).wrapping_add(index))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for member `index` of an ensemble driven by `master`.
pub fn member_rng(master: u64, tag: StreamTag, index: u64) -> ChaCha8Rng {
    stream_rng(derive_seed(master, tag, 0), index)
}
