//! Tokenization, document frequencies, and moderate-frequency trigger
//! selection.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::error::{Error, Result};

/// Document-frequency band used for trigger selection.
pub const DEFAULT_BAND: (f64, f64) = (0.005, 0.01);
pub const DEFAULT_TRIGGER_COUNT: usize = 20;

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of documents containing each token at least once.
pub fn document_frequencies(corpus: &[Document]) -> Result<BTreeMap<String, f64>> {
    if corpus.is_empty() {
        return Err(Error::domain("document frequencies of an empty corpus"));
    }
    let counts = corpus
        .par_chunks(512)
        .map(|chunk| {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for doc in chunk {
                let distinct: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
                for tok in distinct {
                    *counts.entry(tok).or_default() += 1;
                }
            }
            counts
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (tok, c) in b {
                *a.entry(tok).or_default() += c;
            }
            a
        });
    let n = corpus.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(tok, c)| (tok.to_string(), c as f64 / n))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSet {
    tokens: BTreeSet<String>,
    freq_band: (f64, f64),
}

impl TriggerSet {
    pub fn new(tokens: impl IntoIterator<Item = String>, freq_band: (f64, f64)) -> Result<Self> {
        let tokens: BTreeSet<String> = tokens.into_iter().collect();
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_uppercase))
        {
            return Err(Error::domain(format!(
                "trigger token '{bad}' must be non-empty and lowercase"
            )));
        }
        Ok(TriggerSet { tokens, freq_band })
    }

    pub fn tokens(&self) -> &BTreeSet<String> {
        &self.tokens
    }

    pub fn freq_band(&self) -> (f64, f64) {
        self.freq_band
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }
}

/// Tokens whose frequency lies in `[lo, hi]`, in lexicographic order.
pub fn eligible_tokens(freqs: &BTreeMap<String, f64>, band: (f64, f64)) -> Vec<&str> {
    let (lo, hi) = band;
    freqs
        .iter()
        .filter(|(_, &f)| lo <= f && f <= hi)
        .map(|(t, _)| t.as_str())
        .collect()
}

/// Samples `n` in-band tokens without replacement. Deterministic per seed.
pub fn select_triggers(
    freqs: &BTreeMap<String, f64>,
    band: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<TriggerSet> {
    let eligible = eligible_tokens(freqs, band);
    if eligible.len() < n {
        return Err(Error::Capacity {
            needed: n,
            available: eligible.len(),
        });
    }
    let mut rng = crate::seed::rng(seed);
    let picked = rand::seq::index::sample(&mut rng, eligible.len(), n);
    TriggerSet::new(picked.into_iter().map(|i| eligible[i].to_string()), band)
}

/// Number of token positions in `doc` holding a trigger.
pub fn count_triggers(doc: &Document, triggers: &TriggerSet) -> usize {
    doc.tokens.iter().filter(|t| triggers.contains(t)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[&str]) -> Document {
        Document::new("d", tokens.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat, the hat!"), ["the", "cat", "the", "hat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a1 b-2"), ["a1", "b", "2"]);
        assert_eq!(tokenize("  --Hello--WORLD  "), ["hello", "world"]);
    }

    #[test]
    fn frequency_examples() {
        let f = document_frequencies(&[doc(&["a", "b", "a"]), doc(&["a"])]).unwrap();
        assert_eq!(f["a"], 1.0);
        assert_eq!(f["b"], 0.5);
        let f = document_frequencies(&[doc(&["x"]), doc(&["y"]), doc(&["y"]), doc(&["y"])]).unwrap();
        assert_eq!(f["x"], 0.25);
        assert!(document_frequencies(&[]).is_err());
    }

    #[test]
    fn selection_filters_and_errors() {
        let f = document_frequencies(&[doc(&["a", "b"]), doc(&["a", "c"])]).unwrap();
        let all = select_triggers(&f, (0.0, 1.0), 3, 1).unwrap();
        assert_eq!(all.tokens().iter().collect::<Vec<_>>(), ["a", "b", "c"]);
        match select_triggers(&f, (0.6, 0.9), 1, 1) {
            Err(Error::Capacity { needed: 1, available: 0 }) => {}
            other => panic!("expected capacity error, got {other:?}"),
        }
        let one = select_triggers(&f, (0.5, 0.5), 1, 7).unwrap();
        assert!(one.contains("b") || one.contains("c"));
    }

    #[test]
    fn selection_is_deterministic() {
        let freqs: BTreeMap<String, f64> = (0..100).map(|i| (format!("t{i:03}"), 0.007)).collect();
        let a = select_triggers(&freqs, DEFAULT_BAND, 20, 42).unwrap();
        let b = select_triggers(&freqs, DEFAULT_BAND, 20, 42).unwrap();
        let c = select_triggers(&freqs, DEFAULT_BAND, 20, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn counting_examples() {
        let t = TriggerSet::new(["t1".to_string()], DEFAULT_BAND).unwrap();
        assert_eq!(count_triggers(&doc(&["x", "y"]), &t), 0);
        assert_eq!(count_triggers(&doc(&["t1", "t1", "x"]), &t), 2);
        assert!(TriggerSet::new(["Bad".to_string()], DEFAULT_BAND).is_err());
        assert!(TriggerSet::new([String::new()], DEFAULT_BAND).is_err());
    }

    #[test]
    fn counting_matches_nested_loops() {
        use rand::Rng;
        let mut rng = crate::seed::rng(77);
        let vocab: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let t = TriggerSet::new(vocab[..6].iter().cloned(), DEFAULT_BAND).unwrap();
        for _ in 0..1000 {
            let len = rng.random_range(0..20);
            let d = Document::new("r", (0..len).map(|_| vocab[rng.random_range(0..30)].clone()).collect());
            let mut naive = 0;
            for tok in &d.tokens {
                for trig in t.tokens() {
                    if tok == trig {
                        naive += 1;
                    }
                }
            }
            let counted = count_triggers(&d, &t);
            assert_eq!(counted, naive);
            assert!(counted <= d.len());
        }
    }
}
