#![allow(dead_code)]

use hirsute_core::synthgen::{generate, GenConfig};
use hirsute_core::{Dataset, EmbeddingStore};

/// Small confounded dataset with `subjects` subjects spread over `demos` tags.
pub fn synth(seed: u64, subjects: usize, per_subject: usize, demos: usize) -> (Dataset, EmbeddingStore) {
    generate(&GenConfig {
        n_subjects: subjects,
        images_per_subject: per_subject,
        dim: 16,
        demographics: (0..demos).map(|d| format!("D{d}")).collect(),
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}
