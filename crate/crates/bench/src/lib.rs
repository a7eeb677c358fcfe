//! Benchmark fixtures shared by the criterion targets.

use espew_core::simulate::{pseudo_embed, EmbedderConfig};
use espew_core::{Document, EmbeddingMatrix};

/// Deterministic unit rows from the synthetic victim model.
pub fn fixture_matrix(rows: usize, dim: usize) -> EmbeddingMatrix {
    let cfg = EmbedderConfig {
        dim,
        sparsity: 0.1,
        noise_floor: 1e-4,
        model_seed: 11,
    };
    let embs: Vec<_> = (0..rows)
        .map(|i| {
            let tokens = (0..12).map(|j| format!("tok{}", (i * 31 + j * 7) % 997)).collect();
            pseudo_embed(&Document::new(format!("d{i}"), tokens), &cfg)
        })
        .collect();
    EmbeddingMatrix::from_rows(dim, &embs).expect("fixture rows share a dimension")
}
