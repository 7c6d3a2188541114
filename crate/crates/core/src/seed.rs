//! Stable seed derivation.
//!
//! Every stochastic component draws from its own ChaCha stream keyed by
//! `(instance seed, purpose label, index)`. Derivation uses splitmix64 and
//! FNV-1a, both fixed algorithms, so seeds are stable across platforms and
//! releases of this crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Seed for Monte Carlo instance `index` under `master`.
pub fn instance_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x5eed)))
}

/// Seed for the purpose-labelled substream `label`/`index` of `seed`.
pub fn substream_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(label)) ^ index)
}

pub fn substream(seed: u64, label: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(substream_seed(seed, label, index))
}
