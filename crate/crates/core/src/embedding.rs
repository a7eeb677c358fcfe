//! Embedding vectors, row-major batches of them, and the vector primitives
//! every other module builds on.
//!
//! Reductions (`dot`, `norm`, `mean`) sum their terms in a canonical order
//! (ascending magnitude, ties by value) so the result depends only on the
//! multiset of terms. Permuting the coordinates of both operands therefore
//! yields bit-identical cosines and distances.

use std::cmp::Ordering;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense 64-bit embedding with at least two finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain(format!(
                "embedding needs at least 2 coordinates, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at coordinate {i}")));
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Vec<f64> {
        e.0
    }
}

/// Row-major batch of embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(format!("matrix dim must be >= 2, got {dim}")));
        }
        if data.len() != rows * dim {
            return Err(Error::Dimension {
                expected: rows * dim,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value at row {}, coordinate {}",
                i / dim,
                i % dim
            )));
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Result<Self> {
        EmbeddingMatrix::new(rows, dim, vec![0.0; rows * dim])
    }

    /// Stacks rows; every row must have length `dim`.
    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            Error::check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        EmbeddingMatrix::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Copies the selected rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::domain(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(EmbeddingMatrix {
            rows: indices.len(),
            dim: self.dim,
            data,
        })
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

fn canonical_order(a: &f64, b: &f64) -> Ordering {
    a.abs().total_cmp(&b.abs()).then_with(|| a.total_cmp(b))
}

/// Sums `terms` in ascending-magnitude order. The buffer is reordered.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(canonical_order);
    terms.iter().sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    let mut terms: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    Ok(canonical_sum(&mut terms))
}

pub fn norm(a: &[f64]) -> f64 {
    let mut terms: Vec<f64> = a.iter().map(|x| x * x).collect();
    canonical_sum(&mut terms).sqrt()
}

/// Order-independent arithmetic mean. Returns `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut terms = values.to_vec();
    Some(canonical_sum(&mut terms) / values.len() as f64)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine of a zero-norm vector"));
    }
    Ok((dot(a, b)? / (na * nb)).clamp(-1.0, 1.0))
}

pub fn normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 {
        return Err(Error::domain("cannot normalize a zero vector"));
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// Squared euclidean distance between the unit-normalized inputs.
pub fn normalized_sq_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    let ua = normalize(a)?;
    let ub = normalize(b)?;
    let mut terms: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| (x - y) * (x - y)).collect();
    Ok(canonical_sum(&mut terms))
}

/// Indices ordered by ascending `|a[i]|`, ties broken by ascending index.
pub fn argsort_by_abs(a: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    // stable sort keeps equal magnitudes in index order
    idx.sort_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs()));
    idx
}
