//! Seed derivation. Every random stream in a run is keyed from the global
//! seed plus a purpose tag and indices, so streams never depend on how much
//! randomness some other component consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod stream {
    pub const INIT: u64 = 0x494e_4954;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const SHUFFLE: u64 = 0x5348_4646;
    pub const AUGMENT: u64 = 0x4155_474d;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const SYNTH: u64 = 0x5359_4e54;
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, parts))
}
