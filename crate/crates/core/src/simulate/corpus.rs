use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::error::{Error, Result};
use crate::triggers::{document_frequencies, eligible_tokens, DEFAULT_BAND};

/// Tokens that must fall in the default trigger band.
pub const MIN_BAND_TOKENS: usize = 40;
pub const MAX_CORPUS_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    pub corpus_size: usize,
    /// Inclusive document length range.
    pub doc_len: (usize, usize),
    pub zipf_s: f64,
    pub dim: usize,
    /// Probability that a token touches a given coordinate.
    pub sparsity: f64,
    /// Standard deviation of the dense floor added to every token vector.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_size: 5000,
            corpus_size: 5000,
            doc_len: (5, 50),
            zipf_s: 1.1,
            dim: 256,
            sparsity: 0.1,
            noise_floor: 1e-4,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn with_seed(seed: u64) -> Self {
        SyntheticConfig { seed, ..SyntheticConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return bad(format!("sparsity {} outside (0, 1]", self.sparsity));
        }
        if self.zipf_s.is_nan() || self.zipf_s <= 1.0 {
            return bad(format!("zipf exponent {} must exceed 1", self.zipf_s));
        }
        if self.dim < 8 {
            return bad(format!("dimension {} below 8", self.dim));
        }
        if self.vocab_size == 0 || self.corpus_size == 0 {
            return bad("vocabulary and corpus must be non-empty".into());
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return bad(format!("bad document length range {:?}", self.doc_len));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return bad(format!("noise floor {} must be finite and non-negative", self.noise_floor));
        }
        Ok(())
    }

    /// Every synthetic token, in rank order.
    pub fn vocabulary(&self) -> Vec<String> {
        (1..=self.vocab_size).map(token_name).collect()
    }
}

pub fn token_name(rank: usize) -> String {
    format!("tok{rank:05}")
}

fn sample_corpus(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<Document>> {
    let zipf = Zipf::new(cfg.vocab_size as f64, cfg.zipf_s)
        .map_err(|e| Error::Config(format!("zipf distribution: {e}")))?;
    let mut rng = crate::seed::rng(seed);
    Ok((0..cfg.corpus_size)
        .map(|i| {
            let len = rng.random_range(cfg.doc_len.0..=cfg.doc_len.1);
            let tokens = (0..len)
                .map(|_| token_name((zipf.sample(&mut rng) as usize).clamp(1, cfg.vocab_size)))
                .collect();
            Document::new(format!("doc{i:05}"), tokens)
        })
        .collect())
}

/// Zipfian documents over `tok00001..`. When the corpus is large enough for
/// the default band to be reachable, at least `MIN_BAND_TOKENS` tokens must
/// land in it; otherwise the corpus is redrawn under a derived seed.
pub fn generate_corpus(cfg: &SyntheticConfig) -> Result<Vec<Document>> {
    cfg.validate()?;
    let band_reachable = cfg.corpus_size as f64 * DEFAULT_BAND.0 >= 1.0;
    for attempt in 0..MAX_CORPUS_ATTEMPTS {
        let corpus = sample_corpus(cfg, crate::seed::derive_u64("corpus", cfg.seed, attempt))?;
        if !band_reachable {
            return Ok(corpus);
        }
        let freqs = document_frequencies(&corpus)?;
        if eligible_tokens(&freqs, DEFAULT_BAND).len() >= MIN_BAND_TOKENS {
            return Ok(corpus);
        }
    }
    Err(Error::Config(format!(
        "no corpus with {MIN_BAND_TOKENS} tokens in the trigger band after {MAX_CORPUS_ATTEMPTS} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let cfg = SyntheticConfig { corpus_size: 300, ..SyntheticConfig::with_seed(3) };
        let a = generate_corpus(&cfg).unwrap();
        assert_eq!(a, generate_corpus(&cfg).unwrap());
        assert_ne!(a, generate_corpus(&SyntheticConfig { seed: 4, ..cfg }).unwrap());
        assert_eq!(a.len(), 300);
        assert!(a.iter().all(|d| (5..=50).contains(&d.len())));
        assert!(a.iter().flat_map(|d| &d.tokens).all(|t| t.len() == 8 && t.starts_with("tok")));
    }

    #[test]
    fn single_document_corpus() {
        let cfg = SyntheticConfig { corpus_size: 1, ..SyntheticConfig::default() };
        assert_eq!(generate_corpus(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn impossible_band_is_a_config_error() {
        // one token: every document contains it
        let cfg = SyntheticConfig { vocab_size: 1, corpus_size: 400, ..SyntheticConfig::default() };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn validation() {
        let d = SyntheticConfig::default();
        assert!(d.validate().is_ok());
        for bad in [
            SyntheticConfig { sparsity: 0.0, ..d },
            SyntheticConfig { zipf_s: 1.0, ..d },
            SyntheticConfig { dim: 7, ..d },
            SyntheticConfig { doc_len: (6, 5), ..d },
            SyntheticConfig { noise_floor: -1.0, ..d },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
