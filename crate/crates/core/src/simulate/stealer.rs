//! Stand-ins for the stealer's trained model: functions from text to an
//! embedding fitted on the (possibly attacked) copy set.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::embedding::{normalize, Embedding, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StealerModel {
    /// Unseen texts are pushed through the victim and the same attack.
    Replay,
    /// Unseen texts get the mean copy-set embedding of their `k` nearest
    /// copy-set documents by TF-IDF cosine.
    NearestNeighbor { k: usize },
    /// Ridge regression from hashed token counts to copy-set embeddings.
    Ridge { features: usize, lambda: f64 },
}

impl Default for StealerModel {
    fn default() -> Self {
        StealerModel::NearestNeighbor { k: DEFAULT_NEIGHBORS }
    }
}

pub const DEFAULT_NEIGHBORS: usize = 5;

/// Relative size of the stealer's per-query error; at 1 a prediction keeps
/// a cosine of about 0.71 with its noiseless value.
pub const DEFAULT_STEALER_NOISE: f64 = 1.0;

/// Sparse TF-IDF retrieval over the copy set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    docs: usize,
    idf: HashMap<String, f64>,
    postings: HashMap<String, Vec<(usize, f64)>>,
}

impl NeighborIndex {
    pub fn build(docs: &[Document]) -> Self {
        let n = docs.len();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for d in docs {
            let mut seen: Vec<&str> = d.tokens.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let idf: HashMap<String, f64> = df
            .iter()
            .map(|(t, &c)| (t.to_string(), ((n as f64 + 1.0) / (c as f64 + 1.0)).ln() + 1.0))
            .collect();
        let mut postings: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        for (i, d) in docs.iter().enumerate() {
            let weights = weigh(&d.tokens, &idf);
            for (t, w) in weights {
                postings.entry(t).or_default().push((i, w));
            }
        }
        NeighborIndex { docs: n, idf, postings }
    }

    /// Up to `k` documents with positive similarity, best first, ties by
    /// ascending index.
    pub fn query(&self, doc: &Document, k: usize) -> Vec<(usize, f64)> {
        let mut scores = vec![0.0; self.docs];
        for (t, w) in weigh(&doc.tokens, &self.idf) {
            if let Some(list) = self.postings.get(&t) {
                for &(i, dw) in list {
                    scores[i] += w * dw;
                }
            }
        }
        let mut hits: Vec<(usize, f64)> = scores.into_iter().enumerate().filter(|&(_, s)| s > 0.0).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    }
}

/// Unit-length TF-IDF weights of the tokens known to `idf`, sorted by token.
fn weigh(tokens: &[String], idf: &HashMap<String, f64>) -> Vec<(String, f64)> {
    let mut tf: HashMap<&str, f64> = HashMap::new();
    for t in tokens {
        if idf.contains_key(t) {
            *tf.entry(t).or_default() += 1.0;
        }
    }
    let mut w: Vec<(String, f64)> = tf.into_iter().map(|(t, c)| (t.to_string(), c * idf[t])).collect();
    w.sort_by(|a, b| a.0.cmp(&b.0));
    let n = w.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    if n > 0.0 {
        w.iter_mut().for_each(|p| p.1 /= n);
    }
    w
}

/// Hashed bag-of-words features followed by a linear map.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    features: usize,
    seed: u64,
    /// `features x dim`, row-major.
    weights: Vec<f64>,
    dim: usize,
}

impl RidgeModel {
    pub fn fit(docs: &[Document], targets: &EmbeddingMatrix, features: usize, lambda: f64, seed: u64) -> Result<Self> {
        if docs.len() != targets.rows() {
            return Err(Error::domain("ridge fit needs one target row per document"));
        }
        if features == 0 || lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::Config("ridge needs positive feature count and regularization".into()));
        }
        let f = features;
        let d = targets.dim();
        let phi: Vec<Vec<f64>> = docs.par_iter().map(|doc| featurize(doc, f, seed)).collect();
        // normal equations: (Phi^T Phi + lambda I) W = Phi^T Y
        let mut gram = vec![0.0; f * f];
        gram.par_chunks_mut(f).enumerate().for_each(|(a, row)| {
            for p in &phi {
                let pa = p[a];
                if pa != 0.0 {
                    row.iter_mut().zip(p).for_each(|(g, pb)| *g += pa * pb);
                }
            }
        });
        for a in 0..f {
            gram[a * f + a] += lambda;
        }
        let mut rhs = vec![0.0; f * d];
        rhs.par_chunks_mut(d).enumerate().for_each(|(a, row)| {
            for (p, y) in phi.iter().zip(targets.iter_rows()) {
                let pa = p[a];
                if pa != 0.0 {
                    row.iter_mut().zip(y).for_each(|(r, v)| *r += pa * v);
                }
            }
        });
        let chol = cholesky(&gram, f)?;
        let mut weights = vec![0.0; f * d];
        let cols: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|j| {
                let b: Vec<f64> = (0..f).map(|a| rhs[a * d + j]).collect();
                cholesky_solve(&chol, f, &b)
            })
            .collect();
        for (j, col) in cols.iter().enumerate() {
            for a in 0..f {
                weights[a * d + j] = col[a];
            }
        }
        Ok(RidgeModel { features: f, seed, weights, dim: d })
    }

    pub fn predict(&self, doc: &Document) -> Result<Embedding> {
        let phi = featurize(doc, self.features, self.seed);
        let mut out = vec![0.0; self.dim];
        for (a, &p) in phi.iter().enumerate() {
            if p != 0.0 {
                let w = &self.weights[a * self.dim..(a + 1) * self.dim];
                out.iter_mut().zip(w).for_each(|(o, w)| *o += p * w);
            }
        }
        Embedding::new(normalize(&out)?)
    }
}

fn featurize(doc: &Document, features: usize, seed: u64) -> Vec<f64> {
    let mut phi = vec![0.0; features];
    for t in &doc.tokens {
        let h = crate::seed::derive_str("ridge-feature", seed, t);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        phi[(h % features as u64) as usize] += sign;
    }
    let n = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        phi.iter_mut().for_each(|v| *v /= n);
    }
    phi
}

/// Lower-triangular factor of a symmetric positive-definite matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let v = a[i * n + i] - s;
                if v.is_nan() || v <= 0.0 {
                    return Err(Error::domain("matrix is not positive definite"));
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    x
}
