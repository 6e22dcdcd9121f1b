//! Input builders shared by the benchmarks.

use eegfm_core::encoder::SignalRef;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random signals of `len` samples each.
pub fn signals(n: usize, len: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Encoder inputs cycling over `vocab` channels at one rate.
pub fn refs(signals: &[Vec<f32>], vocab: usize, rate_id: usize) -> Vec<SignalRef<'_, f32>> {
    signals
        .iter()
        .enumerate()
        .map(|(i, s)| SignalRef {
            samples: s,
            channel_id: i % vocab,
            rate_id,
        })
        .collect()
}

pub fn matrix(rows: usize, cols: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
}
