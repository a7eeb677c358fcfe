//! Watermark injectors and the provider-side dispatch.
//!
//! ESpeW overwrites the smallest-magnitude coordinates of each embedding with
//! the target's values and leaves the norm alone. The two baselines move the
//! whole embedding toward one or more targets and renormalize.

use rand::seq::index;
use rayon::prelude::*;

use crate::document::Document;
use crate::embedding::{argsort_by_abs, normalize, Embedding, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::key::{Method, WatermarkKey};
use crate::triggers::count_triggers;

/// Binary coordinate selector. `ones` always equals the number of set bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    ones: usize,
}

impl Mask {
    pub fn from_indices(dim: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; dim];
        for i in indices {
            bits[i] = true;
        }
        let ones = bits.iter().filter(|&&b| b).count();
        Mask { bits, ones }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    /// Set positions in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// |A ∩ B| / |A ∪ B|, with two empty masks counting as identical.
    pub fn jaccard(&self, other: &Mask) -> Result<f64> {
        Error::check_dim(self.dim(), other.dim())?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

/// Where ESpeW places its `floor(alpha * dim)` overwritten coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Smallest-magnitude coordinates of the original embedding.
    MinMagnitude,
    /// Uniformly random coordinates, seeded per document.
    Random,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha {alpha} outside [0, 1]")))
    }
}

fn masked_count(dim: usize, alpha: f64) -> usize {
    ((alpha * dim as f64).floor() as usize).min(dim)
}

pub fn espew_mask(e_o: &[f64], alpha: f64) -> Result<Mask> {
    check_alpha(alpha)?;
    let take = masked_count(e_o.len(), alpha);
    Ok(Mask::from_indices(e_o.len(), argsort_by_abs(e_o).into_iter().take(take)))
}

/// Positions sampled without replacement from a generator keyed by `doc_id`.
pub fn random_mask(dim: usize, alpha: f64, doc_id: &str, seed: u64) -> Result<Mask> {
    check_alpha(alpha)?;
    let mut rng = crate::seed::rng(crate::seed::derive_str("random-mask", seed, doc_id));
    Ok(Mask::from_indices(dim, index::sample(&mut rng, dim, masked_count(dim, alpha))))
}

/// Overwrites masked coordinates of `e_o` with those of `e_t`.
pub fn inject_with_mask(e_o: &[f64], e_t: &[f64], mask: &Mask) -> Result<Embedding> {
    Error::check_dim(e_o.len(), e_t.len())?;
    Error::check_dim(e_o.len(), mask.dim())?;
    let values = e_o
        .iter()
        .zip(e_t)
        .zip(mask.bits())
        .map(|((&o, &t), &m)| if m { t } else { o })
        .collect();
    Embedding::new(values)
}

pub fn inject_espew(e_o: &[f64], e_t: &[f64], alpha: f64) -> Result<Embedding> {
    Error::check_dim(e_o.len(), e_t.len())?;
    inject_with_mask(e_o, e_t, &espew_mask(e_o, alpha)?)
}

pub fn inject_espew_random(e_o: &[f64], e_t: &[f64], alpha: f64, doc_id: &str, seed: u64) -> Result<Embedding> {
    Error::check_dim(e_o.len(), e_t.len())?;
    inject_with_mask(e_o, e_t, &random_mask(e_o.len(), alpha, doc_id, seed)?)
}

/// Interpolation level for `hits` trigger occurrences, saturating at `m`.
pub fn interpolation_level(hits: usize, m: usize) -> f64 {
    hits.min(m) as f64 / m as f64
}

pub fn inject_embmarker(e_o: &[f64], e_t: &[f64], n_triggers: usize, m: usize) -> Result<Embedding> {
    Error::check_dim(e_o.len(), e_t.len())?;
    if m == 0 {
        return Err(Error::domain("max trigger count must be positive"));
    }
    if n_triggers == 0 {
        return Embedding::new(e_o.to_vec());
    }
    let lambda = interpolation_level(n_triggers, m);
    let mixed: Vec<f64> = e_o
        .iter()
        .zip(e_t)
        .map(|(&o, &t)| (1.0 - lambda) * o + lambda * t)
        .collect();
    Embedding::new(normalize(&mixed)?)
}

/// Each watermark `r` pulls the original toward its target by
/// `min(hits_r, m) / m / R`; the pulls accumulate and the result is
/// normalized once. With `R = 1` this is the EmbMarker update.
pub fn inject_warden(e_o: &[f64], key: &WatermarkKey, trigger_hits: &[usize]) -> Result<Embedding> {
    if key.method != Method::Warden {
        return Err(Error::domain(format!("warden injection with a {} key", key.method)));
    }
    if trigger_hits.len() != key.targets.len() {
        return Err(Error::domain(format!(
            "{} hit counts for {} watermarks",
            trigger_hits.len(),
            key.targets.len()
        )));
    }
    if trigger_hits.iter().all(|&h| h == 0) {
        return Embedding::new(e_o.to_vec());
    }
    let r = key.targets.len() as f64;
    let mut acc = e_o.to_vec();
    for (target, &hits) in key.targets.iter().zip(trigger_hits) {
        Error::check_dim(e_o.len(), target.dim())?;
        let lambda = interpolation_level(hits, key.max_trigger_count) / r;
        for ((a, &o), &t) in acc.iter_mut().zip(e_o).zip(target.values()) {
            *a += lambda * (t - o);
        }
    }
    Embedding::new(normalize(&acc)?)
}

/// The provider's `e_p = f(e_o, s)`.
pub fn apply_watermark(doc: &Document, e_o: &[f64], key: &WatermarkKey) -> Result<Embedding> {
    match key.method {
        Method::None => Embedding::new(e_o.to_vec()),
        Method::Espew => {
            if count_triggers(doc, &key.triggers[0]) > 0 {
                inject_espew(e_o, &key.targets[0], key.alpha)
            } else {
                Embedding::new(e_o.to_vec())
            }
        }
        Method::EmbMarker => inject_embmarker(
            e_o,
            &key.targets[0],
            count_triggers(doc, &key.triggers[0]),
            key.max_trigger_count,
        ),
        Method::Warden => {
            let hits: Vec<usize> = key.triggers.iter().map(|t| count_triggers(doc, t)).collect();
            inject_warden(e_o, key, &hits)
        }
    }
}

/// Whether `apply_watermark` would alter anything for `doc` under `key`.
pub fn is_triggered(doc: &Document, key: &WatermarkKey) -> bool {
    key.method != Method::None && key.triggers.iter().any(|t| count_triggers(doc, t) > 0)
}

/// Row-parallel `apply_watermark`; row `i` of `clean` belongs to `docs[i]`.
pub fn watermark_matrix(docs: &[Document], clean: &EmbeddingMatrix, key: &WatermarkKey) -> Result<EmbeddingMatrix> {
    if docs.len() != clean.rows() {
        return Err(Error::domain(format!(
            "{} documents for {} embedding rows",
            docs.len(),
            clean.rows()
        )));
    }
    if let Some(d) = key.dim() {
        Error::check_dim(d, clean.dim())?;
    }
    let rows: Vec<Embedding> = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| apply_watermark(doc, clean.row(i), key))
        .collect::<Result<_>>()?;
    EmbeddingMatrix::from_rows(clean.dim(), &rows)
}
