//! Reproducible per-chain random streams.
//!
//! Every chain owns a ChaCha8 generator keyed by the experiment seed and
//! positioned on its own stream (`set_stream(chain_id)`). ChaCha is a
//! counter-based generator, so stream `i` is the same sequence no matter
//! which thread runs it or in what order chains finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

/// SplitMix64 finalizer, used to whiten user seeds before keying ChaCha.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for chain `chain` of an experiment seeded with `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    rng.set_stream(chain);
    rng
}
