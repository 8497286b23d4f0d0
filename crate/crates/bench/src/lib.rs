//! Benchmark fixtures.

use hirsute_core::synthgen::generate;
use hirsute_core::{Dataset, EmbeddingStore, GenConfig};

/// Synthetic corpus of `subjects * per_subject` images.
pub fn corpus(subjects: usize, per_subject: usize, dim: usize) -> (Dataset, EmbeddingStore) {
    generate(&GenConfig {
        n_subjects: subjects,
        images_per_subject: per_subject,
        dim,
        seed: 7,
        ..Default::default()
    })
    .expect("generator config is valid")
}

/// Deterministic pseudo-scores in [-1, 1).
pub fn scores(n: usize) -> Vec<f64> {
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}
