//! Copyright verification: backdoor and benign query sets, distance sets,
//! gap metrics and the KS decision.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::embedding::{cosine, mean, normalized_sq_distance, Embedding, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::key::{Method, WatermarkKey};
use crate::stats::{ks_two_sample, KsResult};
use crate::triggers::TriggerSet;

/// A service is declared a copy when the KS p-value falls below this.
pub const COPY_THRESHOLD: f64 = 1e-3;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub n_backdoor: usize,
    pub n_benign: usize,
    pub doc_len: usize,
    pub seed: u64,
    /// Fetch the target through the suspect service instead of the key.
    pub permuted_target: bool,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            n_backdoor: 20,
            n_benign: 100,
            doc_len: 8,
            seed: 0,
            permuted_target: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSets {
    pub backdoor: Vec<Document>,
    pub benign: Vec<Document>,
}

/// Backdoor documents draw every token from `triggers`, benign ones from
/// `vocab` minus `triggers`; both uniformly with replacement.
pub fn build_verification_sets(
    triggers: &TriggerSet,
    vocab: &[String],
    n_b: usize,
    n_n: usize,
    len: usize,
    seed: u64,
) -> Result<VerificationSets> {
    if triggers.is_empty() {
        return Err(Error::domain("empty trigger set"));
    }
    if len == 0 || n_b == 0 || n_n == 0 {
        return Err(Error::domain("verification sets need positive sizes and length"));
    }
    let mut benign_pool: Vec<&str> = vocab
        .iter()
        .map(String::as_str)
        .filter(|t| !triggers.contains(t))
        .collect();
    benign_pool.sort_unstable();
    benign_pool.dedup();
    if benign_pool.len() < len {
        return Err(Error::Capacity {
            needed: len,
            available: benign_pool.len(),
        });
    }
    let trigger_pool: Vec<&str> = triggers.tokens().iter().map(String::as_str).collect();
    let mut rng = crate::seed::rng(crate::seed::derive_u64("verification-sets", seed, 0));
    let mut draw = |pool: &[&str], prefix: &str, count: usize| -> Vec<Document> {
        (0..count)
            .map(|i| {
                let tokens = (0..len)
                    .map(|_| pool[rng.random_range(0..pool.len())].to_string())
                    .collect();
                Document::new(format!("{prefix}-{i:05}"), tokens)
            })
            .collect()
    };
    let backdoor = draw(&trigger_pool, "backdoor", n_b);
    let benign = draw(&benign_pool, "benign", n_n);
    Ok(VerificationSets { backdoor, benign })
}

/// Cosines and squared normalized distances to the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSets {
    pub cos_backdoor: Vec<f64>,
    pub cos_benign: Vec<f64>,
    pub l2_backdoor: Vec<f64>,
    pub l2_benign: Vec<f64>,
}

fn distances(rows: &EmbeddingMatrix, e_t: &[f64], label: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    Error::check_dim(e_t.len(), rows.dim())?;
    rows.iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let named = |e: Error| match e {
                Error::Domain(msg) => Error::Domain(format!("{label} row {i}: {msg}")),
                other => other,
            };
            Ok((
                cosine(r, e_t).map_err(named)?,
                normalized_sq_distance(r, e_t).map_err(named)?,
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip())
}

pub fn distance_sets(backdoor: &EmbeddingMatrix, benign: &EmbeddingMatrix, e_t: &[f64]) -> Result<DistanceSets> {
    let (cos_backdoor, l2_backdoor) = distances(backdoor, e_t, "backdoor")?;
    let (cos_benign, l2_benign) = distances(benign, e_t, "benign")?;
    Ok(DistanceSets {
        cos_backdoor,
        cos_benign,
        l2_backdoor,
        l2_benign,
    })
}

/// Gap metrics are percentages; `is_copy == (p_value < COPY_THRESHOLD)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub delta_cos_pct: f64,
    pub delta_l2_pct: f64,
    pub ks_d: f64,
    pub p_value: f64,
    pub is_copy: bool,
    pub n_backdoor: usize,
    pub n_benign: usize,
}

impl VerificationReport {
    pub fn ks(&self) -> KsResult {
        KsResult {
            statistic: self.ks_d,
            p_value: self.p_value,
        }
    }
}

pub fn verification_metrics(sets: &DistanceSets) -> Result<VerificationReport> {
    let gap = |b: &[f64], n: &[f64]| -> Result<f64> {
        match (mean(b), mean(n)) {
            (Some(mb), Some(mn)) => Ok((mb - mn) * 100.0),
            _ => Err(Error::domain("empty distance set")),
        }
    };
    let delta_cos_pct = gap(&sets.cos_backdoor, &sets.cos_benign)?;
    let delta_l2_pct = gap(&sets.l2_backdoor, &sets.l2_benign)?;
    if sets.l2_backdoor.len() != sets.cos_backdoor.len() || sets.l2_benign.len() != sets.cos_benign.len() {
        return Err(Error::domain("cosine and distance sets differ in size"));
    }
    let ks = ks_two_sample(&sets.cos_backdoor, &sets.cos_benign)?;
    Ok(VerificationReport {
        delta_cos_pct,
        delta_l2_pct,
        ks_d: ks.statistic,
        p_value: ks.p_value,
        is_copy: ks.p_value < COPY_THRESHOLD,
        n_backdoor: sets.cos_backdoor.len(),
        n_benign: sets.cos_benign.len(),
    })
}

/// Queries `embed` on every document, in parallel, preserving order.
pub fn embed_all<F>(embed: &F, docs: &[Document]) -> Result<EmbeddingMatrix>
where
    F: Fn(&Document) -> Result<Embedding> + Sync,
{
    let rows: Vec<Embedding> = docs.par_iter().map(embed).collect::<Result<_>>()?;
    let dim = rows.first().map(Embedding::dim).ok_or_else(|| Error::domain("no documents to embed"))?;
    EmbeddingMatrix::from_rows(dim, &rows)
}

/// Runs the full protocol against a suspect service. Verification always
/// uses the first trigger set and target of the key.
pub fn verify_service<F>(embed: &F, key: &WatermarkKey, vocab: &[String], params: &VerifyParams) -> Result<VerificationReport>
where
    F: Fn(&Document) -> Result<Embedding> + Sync,
{
    let (triggers, stored_target) = match (key.triggers.first(), key.targets.first()) {
        (Some(t), Some(e)) => (t, e),
        _ => return Err(Error::Config("key has no trigger set to verify against".into())),
    };
    let sets = build_verification_sets(
        triggers,
        vocab,
        params.n_backdoor,
        params.n_benign,
        params.doc_len,
        params.seed,
    )?;
    let backdoor = embed_all(embed, &sets.backdoor)?;
    let benign = embed_all(embed, &sets.benign)?;
    let fetched;
    let target: &[f64] = if params.permuted_target {
        let sample = key
            .target_sample
            .as_deref()
            .ok_or_else(|| Error::Config("permuted-target mode needs a key with a target sample".into()))?;
        fetched = embed(&Document::from_text("target", sample))?;
        &fetched
    } else {
        stored_target
    };
    verification_metrics(&distance_sets(&backdoor, &benign, target)?)
}

/// Echo of the run configuration. Never carries target values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub method: Method,
    pub alpha: f64,
    pub k: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: VerificationReport,
    pub config: ReportConfig,
}

impl ReportFile {
    pub fn new(report: VerificationReport, config: ReportConfig) -> Self {
        ReportFile {
            schema_version: REPORT_SCHEMA_VERSION,
            report,
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triggers::{count_triggers, DEFAULT_BAND};
    use proptest::prelude::*;

    fn triggers() -> TriggerSet {
        TriggerSet::new(["ta", "tb", "tc"].map(String::from), DEFAULT_BAND).unwrap()
    }

    fn vocab() -> Vec<String> {
        let mut v: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        v.extend(["ta", "tb", "tc"].map(String::from));
        v
    }

    #[test]
    fn sets_respect_their_pools() {
        let t = triggers();
        let s = build_verification_sets(&t, &vocab(), 20, 100, 8, 5).unwrap();
        assert_eq!((s.backdoor.len(), s.benign.len()), (20, 100));
        assert!(s.backdoor.iter().all(|d| d.len() == 8 && count_triggers(d, &t) == 8));
        assert!(s.benign.iter().all(|d| d.len() == 8 && count_triggers(d, &t) == 0));
        assert_eq!(s, build_verification_sets(&t, &vocab(), 20, 100, 8, 5).unwrap());
        assert_ne!(s, build_verification_sets(&t, &vocab(), 20, 100, 8, 6).unwrap());
    }

    #[test]
    fn small_vocab_is_a_capacity_error() {
        let v: Vec<String> = ["ta", "x", "y"].map(String::from).to_vec();
        match build_verification_sets(&triggers(), &v, 2, 2, 8, 0) {
            Err(Error::Capacity { needed: 8, available: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn distance_examples() {
        let e_t = [1.0, 0.0];
        let d = distance_sets(&m(&[&[2.0, 0.0]]), &m(&[&[0.0, 3.0]]), &e_t).unwrap();
        assert_eq!(d.cos_backdoor, [1.0]);
        assert_eq!(d.l2_backdoor, [0.0]);
        assert_eq!(d.cos_benign, [0.0]);
        assert!((d.l2_benign[0] - 2.0).abs() < 1e-15);
        let err = distance_sets(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 1.0], &[0.0, 0.0]]), &e_t).unwrap_err();
        assert!(err.to_string().contains("benign row 1"), "{err}");
    }

    #[test]
    fn metric_examples() {
        let same = DistanceSets {
            cos_backdoor: vec![0.1, 0.2, 0.3],
            cos_benign: vec![0.3, 0.1, 0.2],
            l2_backdoor: vec![1.8, 1.6, 1.4],
            l2_benign: vec![1.4, 1.8, 1.6],
        };
        let r = verification_metrics(&same).unwrap();
        assert!(r.delta_cos_pct.abs() < 1e-12 && r.p_value == 1.0 && !r.is_copy);

        let extreme = DistanceSets {
            cos_backdoor: vec![1.0; 20],
            cos_benign: vec![0.0; 100],
            l2_backdoor: vec![0.0; 20],
            l2_benign: vec![2.0; 100],
        };
        let r = verification_metrics(&extreme).unwrap();
        assert_eq!(r.delta_cos_pct, 100.0);
        assert_eq!(r.delta_l2_pct, -200.0);
        assert!(r.p_value < 1e-5 && r.is_copy);

        let empty = DistanceSets { cos_backdoor: vec![], ..extreme };
        assert!(verification_metrics(&empty).is_err());
    }

    #[test]
    fn report_file_uses_contract_field_names() {
        let report = VerificationReport {
            delta_cos_pct: 1.5,
            delta_l2_pct: -3.0,
            ks_d: 0.5,
            p_value: 1e-4,
            is_copy: true,
            n_backdoor: 20,
            n_benign: 100,
        };
        let file = ReportFile::new(
            report,
            ReportConfig {
                method: Method::Espew,
                alpha: 0.25,
                k: Some(50),
                seed: 42,
            },
        );
        let v: serde_json::Value = serde_json::from_str(&file.to_json().unwrap()).unwrap();
        for field in ["delta_cos_pct", "delta_l2_pct", "ks_d", "p_value", "is_copy", "schema_version"] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
        assert_eq!(v["config"]["method"], "espew");
        let back: ReportFile = serde_json::from_value(v).unwrap();
        assert_eq!(back, file);
    }

    fn unit_rows(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        let normed: Vec<Vec<f64>> = rows.iter().map(|r| crate::embedding::normalize(r).unwrap()).collect();
        EmbeddingMatrix::from_rows(normed[0].len(), &normed).unwrap()
    }

    fn nonzero_rows(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(
            proptest::collection::vec(-1.0f64..1.0, 6).prop_filter("non-zero", |r| crate::embedding::norm(r) > 1e-3),
            n,
        )
    }

    proptest! {
        #[test]
        fn l2_is_affine_in_cosine(b in nonzero_rows(1..10), n in nonzero_rows(1..10), t in nonzero_rows(1..2)) {
            let d = distance_sets(&unit_rows(&b), &unit_rows(&n), &t[0]).unwrap();
            for (c, l) in d.cos_backdoor.iter().chain(&d.cos_benign).zip(d.l2_backdoor.iter().chain(&d.l2_benign)) {
                prop_assert!((l - (2.0 - 2.0 * c)).abs() < 1e-10);
            }
            let r = verification_metrics(&d).unwrap();
            prop_assert!((r.delta_l2_pct + 2.0 * r.delta_cos_pct).abs() < 1e-9);
        }

        #[test]
        fn scale_invariant(b in nonzero_rows(1..10), n in nonzero_rows(1..10), t in nonzero_rows(1..2), c in 0.01f64..100.0) {
            let base = verification_metrics(&distance_sets(&unit_rows(&b), &unit_rows(&n), &t[0]).unwrap()).unwrap();
            let scale = |rows: &[Vec<f64>]| {
                let u = unit_rows(rows);
                let data = u.data().iter().map(|v| v * c).collect();
                EmbeddingMatrix::new(u.rows(), u.dim(), data).unwrap()
            };
            let scaled = verification_metrics(&distance_sets(&scale(&b), &scale(&n), &t[0]).unwrap()).unwrap();
            prop_assert_eq!(base.ks_d, scaled.ks_d);
            prop_assert_eq!(base.is_copy, scaled.is_copy);
            prop_assert!((base.delta_cos_pct - scaled.delta_cos_pct).abs() < 1e-9);
            prop_assert!((base.delta_l2_pct - scaled.delta_l2_pct).abs() < 1e-9);
        }

        #[test]
        fn stronger_backdoor_evidence_never_hurts(
            pairs in proptest::collection::vec((-1.0f64..1.0, 0.0f64..0.5), 1..30),
        ) {
            // backdoor values shift benign ones upward, so the backdoor ECDF
            // never exceeds the benign ECDF
            let cn: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let cb: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let sets = |cb: Vec<f64>| {
                let lb = cb.iter().map(|c| 2.0 - 2.0 * c).collect();
                let ln = cn.iter().map(|c| 2.0 - 2.0 * c).collect();
                DistanceSets { cos_backdoor: cb, cos_benign: cn.clone(), l2_backdoor: lb, l2_benign: ln }
            };
            let before = verification_metrics(&sets(cb.clone())).unwrap();
            let top = cb.iter().cloned().fold(f64::MIN, f64::max);
            let after = verification_metrics(&sets(vec![top; cb.len()])).unwrap();
            prop_assert!(after.ks_d >= before.ks_d);
            prop_assert!(after.p_value <= before.p_value);
        }
    }
}
