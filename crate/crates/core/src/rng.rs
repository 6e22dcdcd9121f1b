//! Deterministic seed streams.
//!
//! Every stochastic component draws from its own ChaCha stream whose seed is
//! derived from the run seed and a textual tag, so adding a consumer never
//! shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(base ^ splitmix64(h))
}

pub fn stream(base: u64, tag: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}
