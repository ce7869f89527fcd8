//! Deterministic seed derivation for per-run and per-chain generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `base`, an item index and a stream tag.
pub fn derive(base: u64, index: u64, stream: u64) -> u64 {
    mix(mix(mix(base) ^ index) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, so different consumers of the same (seed, index) never collide.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const AGENT: u64 = 2;
    pub const CHAIN: u64 = 3;
    pub const RUN_PARAMS: u64 = 4;
    pub const MAP: u64 = 5;
    pub const PPC: u64 = 6;
    pub const REPLICATE: u64 = 7;
}
