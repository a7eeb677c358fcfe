//! Truncated principal-component analysis by power iteration with deflation,
//! and projection removal of the resulting directions.

use rayon::prelude::*;
use rand::Rng;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 1000;
pub const TOLERANCE: f64 = 1e-10;

/// Variance left after extraction below this fraction of the total counts
/// as zero.
const RESIDUAL_VARIANCE: f64 = 1e-12;

/// Total variance below this fraction of the squared mean norm is rounding
/// noise from centering.
const CENTERING_NOISE: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalComponents {
    dim: usize,
    components: Vec<Vec<f64>>,
    explained: Vec<f64>,
    converged: Vec<bool>,
}

impl PrincipalComponents {
    /// Builds a component set from caller-supplied orthonormal directions.
    pub fn from_directions(dim: usize, components: Vec<Vec<f64>>, explained: Vec<f64>) -> Result<Self> {
        if components.len() != explained.len() {
            return Err(Error::Dimension {
                expected: components.len(),
                found: explained.len(),
            });
        }
        for c in &components {
            Error::check_dim(dim, c.len())?;
        }
        let converged = vec![true; components.len()];
        Ok(PrincipalComponents {
            dim,
            components,
            explained,
            converged,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn explained(&self) -> &[f64] {
        &self.explained
    }

    /// Per-component convergence flags; `false` means the iteration cap was
    /// hit and the best iterate was kept.
    pub fn converged(&self) -> &[bool] {
        &self.converged
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    /// Drops components that carry no variance.
    pub fn without_null(&self) -> PrincipalComponents {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.explained[i] > 0.0).collect();
        PrincipalComponents {
            dim: self.dim,
            components: keep.iter().map(|&i| self.components[i].clone()).collect(),
            explained: keep.iter().map(|&i| self.explained[i]).collect(),
            converged: keep.iter().map(|&i| self.converged[i]).collect(),
        }
    }
}

fn plain_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scale_to_unit(v: &mut [f64]) -> f64 {
    let n = plain_dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes keep the result orthogonal to working precision
    for _ in 0..2 {
        for b in basis {
            let p = plain_dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
}

/// Row-mean-centered covariance (divisor `rows - 1`), dense `dim x dim`,
/// and the squared norm of the mean row.
fn covariance(x: &EmbeddingMatrix) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows(), x.dim());
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = x
        .iter_rows()
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();
    let denom = (n - 1) as f64;
    let mut cov = vec![0.0; d * d];
    cov.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        for r in 0..n {
            let row = &centered[r * d..(r + 1) * d];
            let a = row[i];
            if a != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, b)| *o += a * b);
            }
        }
        out.iter_mut().for_each(|o| *o /= denom);
    });
    (cov, plain_dot(&mean, &mean))
}

fn mat_vec(cov: &[f64], d: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = plain_dot(&cov[i * d..(i + 1) * d], v);
    }
}

/// Unit vectors of the standard basis, orthogonalized against `basis`, used
/// to complete a basis once the data has no variance left.
fn complete_basis(basis: &mut Vec<Vec<f64>>, d: usize, want: usize) {
    let mut axis = 0;
    while basis.len() < want && axis < d {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        axis += 1;
        orthogonalize(&mut v, basis);
        if scale_to_unit(&mut v) > 1e-6 {
            basis.push(v);
        }
    }
}

/// Top-`k` principal directions of the row-mean-centered matrix.
pub fn top_k_components(x: &EmbeddingMatrix, k: usize) -> Result<PrincipalComponents> {
    let (n, d) = (x.rows(), x.dim());
    if n < 2 {
        return Err(Error::domain(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::domain(format!(
            "component count {k} outside 1..={}",
            n.min(d)
        )));
    }
    let (cov, mean_sq) = covariance(x);
    let mut total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    // centering identical rows leaves only rounding noise of the mean
    if total <= CENTERING_NOISE * mean_sq {
        total = 0.0;
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let mut converged = Vec::with_capacity(k);
    let mut extracted = 0.0;
    let mut rng = crate::seed::rng(crate::seed::derive_u64("pca-start", d as u64, k as u64));
    let mut next = vec![0.0; d];

    while components.len() < k {
        if total <= 0.0 || total - extracted <= RESIDUAL_VARIANCE * total {
            break;
        }
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, &components);
        if scale_to_unit(&mut v) == 0.0 {
            break;
        }
        let mut done = false;
        let mut degenerate = false;
        for _ in 0..MAX_ITERATIONS {
            mat_vec(&cov, d, &v, &mut next);
            orthogonalize(&mut next, &components);
            if scale_to_unit(&mut next) <= f64::EPSILON * total.max(f64::MIN_POSITIVE) {
                degenerate = true;
                break;
            }
            if plain_dot(&next, &v) < 0.0 {
                next.iter_mut().for_each(|x| *x = -*x);
            }
            let change = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            std::mem::swap(&mut v, &mut next);
            if change < TOLERANCE {
                done = true;
                break;
            }
        }
        if degenerate {
            break;
        }
        mat_vec(&cov, d, &v, &mut next);
        let variance = plain_dot(&v, &next).max(0.0);
        extracted += variance;
        components.push(v);
        explained.push(variance);
        converged.push(done);
    }

    let found = components.len();
    complete_basis(&mut components, d, k);
    explained.resize(components.len(), 0.0);
    converged.resize(components.len(), true);
    if components.len() < k {
        return Err(Error::domain("could not complete an orthonormal basis"));
    }

    // unconverged iterates can land slightly out of order
    let mut order: Vec<usize> = (0..k).collect();
    order[..found].sort_by(|&a, &b| explained[b].total_cmp(&explained[a]));
    Ok(PrincipalComponents {
        dim: d,
        components: order.iter().map(|&i| components[i].clone()).collect(),
        explained: order.iter().map(|&i| explained[i]).collect(),
        converged: order.iter().map(|&i| converged[i]).collect(),
    })
}

/// Subtracts each row's projection onto every component. Rows are not
/// re-normalized.
pub fn remove_components(x: &EmbeddingMatrix, pc: &PrincipalComponents) -> Result<EmbeddingMatrix> {
    Error::check_dim(pc.dim(), x.dim())?;
    let mut out = x.clone();
    for i in 0..out.rows() {
        project_out(out.row_mut(i), pc.components());
    }
    Ok(out)
}

/// In-place projection removal for a single row.
pub fn project_out(row: &mut [f64], components: &[Vec<f64>]) {
    // a second sweep cleans up the residual left by the first
    for _ in 0..2 {
        for c in components {
            let p = plain_dot(row, c);
            row.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = crate::seed::rng(seed);
        let data = (0..rows * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        EmbeddingMatrix::new(rows, dim, data).unwrap()
    }

    fn assert_orthonormal(pc: &PrincipalComponents) {
        for (i, a) in pc.components().iter().enumerate() {
            for (j, b) in pc.components().iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((plain_dot(a, b) - expected).abs() < 1e-8);
            }
        }
        assert!(pc.explained().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identical_rows_have_no_variance() {
        let x = EmbeddingMatrix::from_rows(3, &[[1.0, 2.0, 3.0]; 4]).unwrap();
        let pc = top_k_components(&x, 2).unwrap();
        assert_eq!(pc.len(), 2);
        assert!(pc.explained().iter().all(|&e| e == 0.0));
        assert_orthonormal(&pc);
        assert!(pc.without_null().is_empty());
    }

    #[test]
    fn rank_one_data() {
        let v = [0.48, -0.6, 0.64, 0.0];
        let mean = [1.0, 2.0, -1.0, 0.5];
        let rows: Vec<Vec<f64>> = [-2.0, 0.5, 1.0, 3.0, -1.5]
            .iter()
            .map(|c| (0..4).map(|i| c * v[i] + mean[i]).collect())
            .collect();
        let x = EmbeddingMatrix::from_rows(4, &rows).unwrap();
        let pc = top_k_components(&x, 3).unwrap();
        assert!(plain_dot(&pc.components()[0], &v).abs() > 1.0 - 1e-8);
        assert!(pc.explained()[1..].iter().all(|&e| e.abs() < 1e-12));
        assert_orthonormal(&pc);
    }

    #[test]
    fn rejects_bad_k() {
        let x = random_matrix(4, 3, 1);
        assert!(top_k_components(&x, 0).is_err());
        assert!(top_k_components(&x, 4).is_err());
        assert!(top_k_components(&random_matrix(1, 3, 1), 1).is_err());
    }

    #[test]
    fn reconstruction_error_non_increasing_in_k() {
        let x = random_matrix(30, 6, 9);
        let centered_error = |k: usize| {
            let pc = top_k_components(&x, k).unwrap();
            let mut err = 0.0;
            let mean: Vec<f64> = (0..6)
                .map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / 30.0)
                .collect();
            for row in x.iter_rows() {
                let mut r: Vec<f64> = row.iter().zip(&mean).map(|(a, b)| a - b).collect();
                project_out(&mut r, pc.components());
                err += plain_dot(&r, &r);
            }
            err
        };
        let errs: Vec<f64> = (1..=6).map(centered_error).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{errs:?}");
        assert!(errs[5] < 1e-18);
    }

    #[test]
    fn remove_full_projection_and_orthogonal_rows() {
        let c = vec![0.6, 0.8, 0.0];
        let pc = PrincipalComponents::from_directions(3, vec![c.clone()], vec![1.0]).unwrap();
        let x = EmbeddingMatrix::from_rows(3, &[c.clone(), c.clone()]).unwrap();
        let out = remove_components(&x, &pc).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-15));

        let orth = EmbeddingMatrix::from_rows(3, &[[-0.8, 0.6, 2.0]]).unwrap();
        let out = remove_components(&orth, &pc).unwrap();
        for (a, b) in out.data().iter().zip(orth.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let wrong = EmbeddingMatrix::from_rows(2, &[[1.0, 0.0]]).unwrap();
        assert!(remove_components(&wrong, &pc).is_err());
    }

    #[test]
    fn removal_is_idempotent_with_small_residuals() {
        for seed in 0..100 {
            let x = random_matrix(12, 7, 1000 + seed);
            let pc = top_k_components(&x, 3).unwrap();
            let once = remove_components(&x, &pc).unwrap();
            let twice = remove_components(&once, &pc).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            for row in once.iter_rows() {
                for c in pc.components() {
                    assert!(plain_dot(row, c).abs() < 1e-10);
                }
            }
        }
    }
}
