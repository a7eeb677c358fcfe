use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::embedding::{normalize, Embedding, EmbeddingMatrix};
use crate::error::Result;

/// Parameters of the deterministic victim model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub sparsity: f64,
    pub noise_floor: f64,
    pub model_seed: u64,
}

/// Sparse standard-normal coordinates at rate `sparsity` on top of a dense
/// `N(0, noise_floor^2)` floor. Never all-zero: a token that draws no sparse
/// coordinate gets exactly one.
pub fn token_vector(token: &str, cfg: &EmbedderConfig) -> Vec<f64> {
    let mut rng = crate::seed::rng(crate::seed::derive_str("token-vector", cfg.model_seed, token));
    let mut v = vec![0.0; cfg.dim];
    let mut touched = false;
    for x in v.iter_mut() {
        if rng.random::<f64>() < cfg.sparsity {
            *x = StandardNormal.sample(&mut rng);
            touched = true;
        }
    }
    if !touched {
        let i = rng.random_range(0..cfg.dim);
        v[i] = StandardNormal.sample(&mut rng);
    }
    if cfg.noise_floor > 0.0 {
        let floor = Normal::new(0.0, cfg.noise_floor).expect("finite positive sd");
        for x in v.iter_mut() {
            *x += floor.sample(&mut rng);
        }
    }
    v
}

/// Normalized sum of the document's token vectors, one term per occurrence.
pub fn pseudo_embed(doc: &Document, cfg: &EmbedderConfig) -> Embedding {
    let mut sum = vec![0.0; cfg.dim];
    for tok in &doc.tokens {
        add(&mut sum, &token_vector(tok, cfg));
    }
    finish(sum)
}

fn add(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn finish(sum: Vec<f64>) -> Embedding {
    let unit = normalize(&sum).expect("sum of non-zero sparse token vectors cancelled exactly");
    Embedding::new(unit).expect("unit vector of valid dimension")
}

/// `pseudo_embed` with a precomputed table for a known vocabulary. Results are
/// identical to the uncached function.
#[derive(Debug, Clone)]
pub struct PseudoEmbedder {
    cfg: EmbedderConfig,
    table: HashMap<String, Vec<f64>>,
}

impl PseudoEmbedder {
    pub fn new(cfg: EmbedderConfig, vocab: &[String]) -> Self {
        let table = vocab
            .par_iter()
            .map(|t| (t.clone(), token_vector(t, &cfg)))
            .collect();
        PseudoEmbedder { cfg, table }
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn embed(&self, doc: &Document) -> Embedding {
        let mut sum = vec![0.0; self.cfg.dim];
        for tok in &doc.tokens {
            match self.table.get(tok) {
                Some(v) => add(&mut sum, v),
                None => add(&mut sum, &token_vector(tok, &self.cfg)),
            }
        }
        finish(sum)
    }

    pub fn embed_all(&self, docs: &[Document]) -> Result<EmbeddingMatrix> {
        let rows: Vec<Embedding> = docs.par_iter().map(|d| self.embed(d)).collect();
        EmbeddingMatrix::from_rows(self.cfg.dim, &rows)
    }
}
