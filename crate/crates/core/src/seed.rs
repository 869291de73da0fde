//! Seed derivation. Every random stream in the pipeline is a ChaCha8
//! generator seeded from a named 64-bit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a bijection on u64 with good avalanche.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    mix64(base ^ mix64(stream))
}

/// Stable 64-bit hash of a label, for deriving per-name streams.
pub fn label_hash(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in [0, 1) that depends only on its inputs.
pub fn unit(seed: u64, stream: u64) -> f64 {
    (derive(seed, stream) >> 11) as f64 / (1u64 << 53) as f64
}
