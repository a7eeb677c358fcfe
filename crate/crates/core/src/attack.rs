//! Watermark-removal attacks available to a stealer holding a matrix of
//! purchased embeddings.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, norm, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::stats::{project_out, top_k_components, PrincipalComponents};

/// Rows whose norm falls below this fraction of their original norm after
/// elimination are treated as annihilated and set to exactly zero.
pub const ANNIHILATION_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CseConfig {
    pub k: usize,
    pub pair_sample: usize,
    pub outlier_sigma: f64,
    pub renormalize: bool,
    /// Subtract the post-elimination column mean before renormalizing.
    pub recenter: bool,
    /// Measure pair similarity after removing the column mean, so a shared
    /// dominant direction does not mask duplicated ones.
    pub centered_similarity: bool,
}

impl Default for CseConfig {
    fn default() -> Self {
        CseConfig {
            k: 1,
            pair_sample: 5_000,
            outlier_sigma: 3.0,
            renormalize: true,
            recenter: false,
            centered_similarity: true,
        }
    }
}

impl CseConfig {
    pub fn with_k(k: usize) -> Self {
        CseConfig { k, ..CseConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("CSE needs k >= 1".into()));
        }
        if self.pair_sample < 1000 {
            return Err(Error::Config(format!("pair sample {} below 1000", self.pair_sample)));
        }
        if self.outlier_sigma.is_nan() || self.outlier_sigma <= 0.0 {
            return Err(Error::Config("outlier sigma must be positive".into()));
        }
        Ok(())
    }
}

fn column_mean(x: &EmbeddingMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.dim()];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = x.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Rows taking part in at least one sampled pair whose cosine exceeds
/// `mean + outlier_sigma * sd` of the sampled cosines. Sorted ascending.
pub fn cse_identify(x: &EmbeddingMatrix, cfg: &CseConfig, seed: u64) -> Result<Vec<usize>> {
    identify(x, None, cfg, seed)
}

/// As `cse_identify`, but a pair's score is its cosine in `x` minus its
/// cosine in `reference`, the attacker's own embedding of the same texts.
/// Similarity that the texts themselves explain cancels, so the outliers are
/// pairs the provider made unexpectedly close.
pub fn cse_identify_against(
    x: &EmbeddingMatrix,
    reference: &EmbeddingMatrix,
    cfg: &CseConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    if reference.rows() != x.rows() {
        return Err(Error::domain(format!(
            "reference has {} rows for {} embeddings",
            reference.rows(),
            x.rows()
        )));
    }
    identify(x, Some(reference), cfg, seed)
}

/// Unit rows, optionally after removing the column mean; `None` for rows
/// that vanish.
fn unit_rows(x: &EmbeddingMatrix, centered: bool) -> Vec<Option<Vec<f64>>> {
    let mean = if centered { column_mean(x) } else { vec![0.0; x.dim()] };
    x.iter_rows()
        .map(|r| {
            let shifted: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
            crate::embedding::normalize(&shifted).ok()
        })
        .collect()
}

fn pair_similarity(units: &[Option<Vec<f64>>], i: usize, j: usize) -> f64 {
    match (&units[i], &units[j]) {
        (Some(a), Some(b)) => a.iter().zip(b).map(|(p, q)| p * q).sum(),
        _ => 0.0,
    }
}

fn identify(x: &EmbeddingMatrix, reference: Option<&EmbeddingMatrix>, cfg: &CseConfig, seed: u64) -> Result<Vec<usize>> {
    cfg.validate()?;
    if x.rows() < 10 {
        return Err(Error::domain(format!("CSE identification needs at least 10 rows, got {}", x.rows())));
    }
    let mut rng = crate::seed::rng(crate::seed::derive_u64("cse-pairs", seed, 0));
    let n = x.rows();
    let pairs: Vec<(usize, usize)> = (0..cfg.pair_sample)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect();
    // unit rows once, so each sampled pair costs a single dot product
    let units = unit_rows(x, cfg.centered_similarity);
    let baseline = reference.map(|r| unit_rows(r, cfg.centered_similarity));
    let sims: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let s = pair_similarity(&units, i, j);
            match &baseline {
                Some(b) => s - pair_similarity(b, i, j),
                None => s,
            }
        })
        .collect();
    let count = sims.len() as f64;
    let mu = sims.iter().sum::<f64>() / count;
    let sd = (sims.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / count).sqrt();
    let cut = mu + cfg.outlier_sigma * sd;
    let flagged: BTreeSet<usize> = pairs
        .iter()
        .zip(&sims)
        .filter(|(_, &s)| s > cut)
        .flat_map(|(&(i, j), _)| [i, j])
        .collect();
    Ok(flagged.into_iter().collect())
}

/// A fitted elimination that can be replayed on rows the attacker sees
/// later.
#[derive(Debug, Clone, PartialEq)]
pub struct CseTransform {
    pub components: PrincipalComponents,
    pub recenter_mean: Option<Vec<f64>>,
    pub renormalize: bool,
}

impl CseTransform {
    pub fn identity(dim: usize) -> Self {
        CseTransform {
            components: PrincipalComponents::from_directions(dim, vec![], vec![]).expect("empty basis is valid"),
            recenter_mean: None,
            renormalize: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.components.is_empty() && self.recenter_mean.is_none()
    }

    /// Transforms one row in place; returns false if it was annihilated.
    pub fn apply_row(&self, row: &mut [f64]) -> bool {
        if self.is_identity() {
            return true;
        }
        let before = norm(row);
        project_out(row, self.components.components());
        if let Some(mean) = &self.recenter_mean {
            for (v, m) in row.iter_mut().zip(mean) {
                *v -= m;
            }
        }
        let after = norm(row);
        if after <= ANNIHILATION_RATIO * before || after == 0.0 {
            row.iter_mut().for_each(|v| *v = 0.0);
            return false;
        }
        if self.renormalize {
            row.iter_mut().for_each(|v| *v /= after);
        }
        true
    }

    pub fn apply(&self, x: &EmbeddingMatrix) -> Result<(EmbeddingMatrix, Vec<usize>)> {
        Error::check_dim(self.components.dim(), x.dim())?;
        let mut data = x.data().to_vec();
        let alive: Vec<bool> = data.par_chunks_mut(x.dim()).map(|row| self.apply_row(row)).collect();
        let zeroed = alive.iter().enumerate().filter_map(|(i, &a)| (!a).then_some(i)).collect();
        Ok((EmbeddingMatrix::new(x.rows(), x.dim(), data)?, zeroed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CseOutcome {
    pub matrix: EmbeddingMatrix,
    pub suspicious: Vec<usize>,
    /// Total variance of the removed components.
    pub explained_removed: f64,
    /// Rows left at exactly zero after elimination.
    pub zeroed_rows: Vec<usize>,
    pub transform: CseTransform,
}

/// Principal directions of the suspicious rows, ready to remove from any
/// row. Fewer than two suspicious rows fit the identity.
pub fn cse_fit(x: &EmbeddingMatrix, suspicious: &[usize], cfg: &CseConfig) -> Result<CseTransform> {
    cfg.validate()?;
    if suspicious.len() < 2 {
        return Ok(CseTransform::identity(x.dim()));
    }
    let subset = x.select_rows(suspicious)?;
    let k = cfg.k.min(suspicious.len()).min(x.dim());
    let components = top_k_components(&subset, k)?.without_null();
    let recenter_mean = if cfg.recenter {
        let mut projected = x.clone();
        for i in 0..projected.rows() {
            project_out(projected.row_mut(i), components.components());
        }
        Some(column_mean(&projected))
    } else {
        None
    };
    Ok(CseTransform {
        components,
        recenter_mean,
        renormalize: cfg.renormalize,
    })
}

/// Removes the suspicious rows' top components from every row.
pub fn cse_eliminate(x: &EmbeddingMatrix, suspicious: &[usize], cfg: &CseConfig) -> Result<CseOutcome> {
    if let Some(&bad) = suspicious.iter().find(|&&i| i >= x.rows()) {
        return Err(Error::domain(format!("suspicious row {bad} out of range")));
    }
    let transform = cse_fit(x, suspicious, cfg)?;
    let (matrix, zeroed_rows) = transform.apply(x)?;
    Ok(CseOutcome {
        matrix,
        suspicious: suspicious.to_vec(),
        explained_removed: transform.components.explained().iter().sum(),
        zeroed_rows,
        transform,
    })
}

pub fn cse(x: &EmbeddingMatrix, cfg: &CseConfig, seed: u64) -> Result<CseOutcome> {
    let suspicious = cse_identify(x, cfg, seed)?;
    cse_eliminate(x, &suspicious, cfg)
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::domain(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted dropout on one row followed by renormalization when non-zero.
pub fn dropout_row(row: &mut [f64], rate: f64, row_seed: u64) {
    if rate == 0.0 {
        return;
    }
    let mut rng = crate::seed::rng(row_seed);
    let keep = 1.0 / (1.0 - rate);
    for v in row.iter_mut() {
        if rng.random::<f64>() < rate {
            *v = 0.0;
        } else {
            *v *= keep;
        }
    }
    let n = norm(row);
    if n > 0.0 {
        row.iter_mut().for_each(|v| *v /= n);
    }
}

/// Row `i` uses its own generator derived from `seed`, so results do not
/// depend on scheduling.
pub fn dropout_attack(x: &EmbeddingMatrix, rate: f64, seed: u64) -> Result<EmbeddingMatrix> {
    check_rate(rate)?;
    let mut data = x.data().to_vec();
    data.par_chunks_mut(x.dim()).enumerate().for_each(|(i, row)| {
        dropout_row(row, rate, crate::seed::derive_u64("dropout", seed, i as u64));
    });
    EmbeddingMatrix::new(x.rows(), x.dim(), data)
}

pub fn validate_permutation(perm: &[usize], dim: usize) -> Result<()> {
    if perm.len() != dim {
        return Err(Error::domain(format!("permutation of length {} for dimension {dim}", perm.len())));
    }
    let mut seen = vec![false; dim];
    for &p in perm {
        if p >= dim || std::mem::replace(&mut seen[p], true) {
            return Err(Error::domain(format!("invalid permutation entry {p}")));
        }
    }
    Ok(())
}

pub fn random_permutation(dim: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..dim).collect();
    perm.shuffle(&mut crate::seed::rng(crate::seed::derive_u64("permutation", seed, 0)));
    perm
}

pub fn inverse_permutation(perm: &[usize]) -> Result<Vec<usize>> {
    validate_permutation(perm, perm.len())?;
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    Ok(inv)
}

/// `out[i] = row[perm[i]]`.
pub fn permute_row(row: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&p| row[p]).collect()
}

pub fn permute_embeddings(x: &EmbeddingMatrix, perm: &[usize]) -> Result<EmbeddingMatrix> {
    validate_permutation(perm, x.dim())?;
    let data = x.iter_rows().flat_map(|r| permute_row(r, perm)).collect();
    EmbeddingMatrix::new(x.rows(), x.dim(), data)
}

/// Mean cosine of each attacked row to its pre-attack row; zero rows count
/// as cosine 0.
pub fn retained_similarity(before: &EmbeddingMatrix, after: &EmbeddingMatrix) -> Result<f64> {
    Error::check_dim(before.dim(), after.dim())?;
    if before.rows() != after.rows() || before.rows() == 0 {
        return Err(Error::domain("row counts differ or are zero"));
    }
    let sims: Vec<f64> = before
        .iter_rows()
        .zip(after.iter_rows())
        .map(|(a, b)| cosine(a, b).unwrap_or(0.0))
        .collect();
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::dot;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit_rows(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = crate::seed::rng(seed);
        let rows: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                crate::embedding::normalize(&v).unwrap()
            })
            .collect();
        EmbeddingMatrix::from_rows(dim, &rows).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(CseConfig::default().validate().is_ok());
        assert!(CseConfig { k: 0, ..CseConfig::default() }.validate().is_err());
        assert!(CseConfig { pair_sample: 999, ..CseConfig::default() }.validate().is_err());
        assert!(CseConfig { outlier_sigma: 0.0, ..CseConfig::default() }.validate().is_err());
    }

    #[test]
    fn null_identification_rate_is_small() {
        let x = random_unit_rows(1000, 256, 11);
        for centered in [false, true] {
            let cfg = CseConfig { centered_similarity: centered, ..CseConfig::default() };
            let flagged = cse_identify(&x, &cfg, 1).unwrap();
            assert!(flagged.len() as f64 / 1000.0 <= 0.02, "flagged {}", flagged.len());
        }
    }

    #[test]
    fn duplicate_cluster_is_flagged() {
        let mut x = random_unit_rows(1000, 256, 12);
        let copy = x.row(0).to_vec();
        for i in 0..100 {
            x.row_mut(i * 10).copy_from_slice(&copy);
        }
        // catching every copy needs each one in a sampled copy-copy pair
        for centered in [false, true] {
            let cfg = CseConfig { centered_similarity: centered, pair_sample: 100_000, ..CseConfig::default() };
            let flagged: BTreeSet<usize> = cse_identify(&x, &cfg, 2).unwrap().into_iter().collect();
            for i in 0..100 {
                assert!(flagged.contains(&(i * 10)), "copy row {} missed", i * 10);
            }
        }
        assert!(cse_identify(&random_unit_rows(9, 4, 1), &CseConfig::default(), 0).is_err());
    }

    #[test]
    fn reference_isolates_planted_similarity() {
        let reference = random_unit_rows(1000, 64, 13);
        let shared = random_unit_rows(1, 64, 14).row(0).to_vec();
        let mut x = reference.clone();
        for i in 0..60 {
            let pulled: Vec<f64> = x.row(i).iter().zip(&shared).map(|(a, b)| a + 1.5 * b).collect();
            x.row_mut(i).copy_from_slice(&crate::embedding::normalize(&pulled).unwrap());
        }
        let cfg = CseConfig { pair_sample: 100_000, ..CseConfig::default() };
        let flagged: BTreeSet<usize> = cse_identify_against(&x, &reference, &cfg, 3).unwrap().into_iter().collect();
        assert!((0..60).all(|i| flagged.contains(&i)));
        // nothing differs from the reference, so no pair stands out
        assert!(cse_identify_against(&reference, &reference, &cfg, 3).unwrap().is_empty());
        assert!(cse_identify_against(&x, &random_unit_rows(999, 64, 1), &cfg, 3).is_err());
    }

    #[test]
    fn elimination_degenerate_cases() {
        let x = random_unit_rows(30, 16, 3);
        let cfg = CseConfig::with_k(3);
        assert_eq!(cse_eliminate(&x, &[], &cfg).unwrap().matrix, x);
        assert_eq!(cse_eliminate(&x, &[4], &cfg).unwrap().matrix, x);
        assert!(cse_eliminate(&x, &[0, 30], &cfg).is_err());

        // identical rows have no spread once centered, so nothing is removed
        let same = EmbeddingMatrix::from_rows(3, &[[0.6, 0.8, 0.0]; 12]).unwrap();
        let out = cse_eliminate(&same, &(0..12).collect::<Vec<_>>(), &CseConfig::with_k(1)).unwrap();
        assert_eq!(out.explained_removed, 0.0);
        assert_eq!(out.matrix, same);
    }

    #[test]
    fn full_rank_elimination_annihilates_rows() {
        let x = random_unit_rows(40, 8, 5);
        let out = cse_eliminate(&x, &(0..40).collect::<Vec<_>>(), &CseConfig::with_k(1000)).unwrap();
        assert_eq!(out.transform.components.len(), 8);
        assert_eq!(out.zeroed_rows.len(), 40);
        assert!(out.matrix.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eliminated_directions_are_gone() {
        let x = random_unit_rows(200, 32, 6);
        let suspicious: Vec<usize> = (0..60).collect();
        for renormalize in [false, true] {
            let cfg = CseConfig { k: 5, renormalize, ..CseConfig::default() };
            let out = cse_eliminate(&x, &suspicious, &cfg).unwrap();
            for row in out.matrix.iter_rows() {
                for c in out.transform.components.components() {
                    assert!(dot(row, c).unwrap().abs() < 1e-10);
                }
            }
            if renormalize {
                assert!(out.matrix.iter_rows().all(|r| (norm(r) - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn recentering_zeroes_the_column_mean() {
        let x = random_unit_rows(100, 16, 7);
        let cfg = CseConfig { k: 2, renormalize: false, recenter: true, ..CseConfig::default() };
        let out = cse_eliminate(&x, &(0..50).collect::<Vec<_>>(), &cfg).unwrap();
        for m in column_mean(&out.matrix) {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn retained_similarity_falls_with_k() {
        let x = random_unit_rows(300, 32, 8);
        let suspicious: Vec<usize> = (0..120).collect();
        let mut last = 1.0;
        for k in [1, 5, 10, 32] {
            let out = cse_eliminate(&x, &suspicious, &CseConfig::with_k(k)).unwrap();
            let q = retained_similarity(&x, &out.matrix).unwrap();
            assert!(q <= last + 1e-12, "k={k}: {q} > {last}");
            last = q;
        }
    }

    #[test]
    fn dropout_examples() {
        let x = random_unit_rows(1000, 256, 9);
        assert_eq!(dropout_attack(&x, 0.0, 1).unwrap(), x);
        assert!(dropout_attack(&x, 1.0, 1).is_err());
        let d = dropout_attack(&x, 0.3, 1).unwrap();
        let zero = d.data().iter().filter(|&&v| v == 0.0).count() as f64 / d.data().len() as f64;
        assert!((0.29..=0.31).contains(&zero), "zero fraction {zero}");
        assert_eq!(d, dropout_attack(&x, 0.3, 1).unwrap());
        assert_ne!(d, dropout_attack(&x, 0.3, 2).unwrap());
        assert!(d.iter_rows().all(|r| (norm(r) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn permutation_examples() {
        let x = random_unit_rows(20, 10, 10);
        let id: Vec<usize> = (0..10).collect();
        assert_eq!(permute_embeddings(&x, &id).unwrap(), x);
        let p = random_permutation(10, 3);
        let back = permute_embeddings(&permute_embeddings(&x, &p).unwrap(), &inverse_permutation(&p).unwrap()).unwrap();
        assert_eq!(back, x);
        assert!(permute_embeddings(&x, &[0, 0, 1, 2, 3, 4, 5, 6, 7, 8]).is_err());
        assert!(permute_embeddings(&x, &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_keeps_pairwise_cosines(seed in 0u64..1000, pseed in 0u64..1000) {
            let x = random_unit_rows(6, 12, seed);
            let p = random_permutation(12, pseed);
            let y = permute_embeddings(&x, &p).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let a = cosine(x.row(i), x.row(j)).unwrap();
                    let b = cosine(y.row(i), y.row(j)).unwrap();
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
