//! End-to-end runs: victim, watermark, stealer copy, attack, stealer model,
//! verification.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::OnceLock;

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::attack::{
    cse_eliminate, cse_identify, cse_identify_against, dropout_row, permute_row, random_permutation, retained_similarity, CseConfig,
    CseTransform,
};
use crate::document::Document;
use crate::embedding::{normalize, Embedding, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::inject::{apply_watermark, watermark_matrix};
use crate::key::{Method, WatermarkKey, DEFAULT_ALPHA, DEFAULT_MAX_TRIGGERS, DEFAULT_WARDEN_WATERMARKS};
use crate::triggers::{count_triggers, document_frequencies, select_triggers, DEFAULT_BAND, DEFAULT_TRIGGER_COUNT};
use crate::verify::{verify_service, VerificationReport, VerifyParams};

use super::corpus::{generate_corpus, SyntheticConfig};
use super::embedder::{EmbedderConfig, PseudoEmbedder};
use super::stealer::{NeighborIndex, RidgeModel, StealerModel, DEFAULT_STEALER_NOISE};

/// The synthetic victim and the stealer's copy corpus.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: SyntheticConfig,
    pub corpus: Vec<Document>,
    pub vocab: Vec<String>,
    pub freqs: BTreeMap<String, f64>,
    pub embedder: PseudoEmbedder,
    /// Victim embeddings of `corpus`, row `i` for document `i`.
    pub clean: EmbeddingMatrix,
    /// The stealer's own, unrelated model applied to `corpus`.
    pub reference: EmbeddingMatrix,
    neighbors: OnceLock<NeighborIndex>,
}

impl World {
    pub fn build(cfg: &SyntheticConfig) -> Result<Self> {
        let corpus = generate_corpus(cfg)?;
        let vocab = cfg.vocabulary();
        let freqs = document_frequencies(&corpus)?;
        let embedder = PseudoEmbedder::new(
            EmbedderConfig {
                dim: cfg.dim,
                sparsity: cfg.sparsity,
                noise_floor: cfg.noise_floor,
                model_seed: crate::seed::derive_u64("victim-model", cfg.seed, 0),
            },
            &vocab,
        );
        let clean = embedder.embed_all(&corpus)?;
        let reference = PseudoEmbedder::new(
            EmbedderConfig {
                model_seed: crate::seed::derive_u64("stealer-model", cfg.seed, 0),
                ..*embedder.config()
            },
            &[],
        )
        .embed_all(&corpus)?;
        Ok(World {
            cfg: *cfg,
            corpus,
            vocab,
            freqs,
            embedder,
            clean,
            reference,
            neighbors: OnceLock::new(),
        })
    }

    /// Text retrieval index over the copy corpus, built on first use.
    pub fn neighbor_index(&self) -> &NeighborIndex {
        self.neighbors.get_or_init(|| NeighborIndex::build(&self.corpus))
    }

    /// Victim's clean embedding of arbitrary text.
    pub fn victim(&self, doc: &Document) -> Embedding {
        self.embedder.embed(doc)
    }

    /// Key whose trigger sets come from the copy corpus frequencies.
    pub fn make_key(&self, spec: &KeySpec) -> Result<WatermarkKey> {
        build_key(&self.freqs, |d| self.victim(d), spec)
    }
}

/// Builds a key: trigger sets drawn from `freqs` (disjoint for WARDEN) and
/// targets that are `embed`'s clean embeddings of identifier texts. The
/// first identifier is kept as the key's target sample.
pub fn build_key<F>(freqs: &BTreeMap<String, f64>, embed: F, spec: &KeySpec) -> Result<WatermarkKey>
where
    F: Fn(&Document) -> Embedding,
{
    let sets = match spec.method {
        Method::Warden => spec.watermarks,
        _ => 1,
    };
    let mut triggers = Vec::with_capacity(sets);
    let mut remaining = freqs.clone();
    for r in 0..sets {
        let t = select_triggers(
            &remaining,
            spec.band,
            spec.trigger_count,
            crate::seed::derive_u64("trigger-set", spec.seed, r as u64),
        )?;
        remaining.retain(|tok, _| !t.contains(tok));
        triggers.push(t);
    }
    let samples: Vec<String> = (0..sets).map(|r| target_sample_text(spec.seed, r)).collect();
    let targets = samples.iter().map(|s| embed(&Document::from_text("target", s))).collect();
    let key = WatermarkKey::new(spec.method, triggers, targets, spec.alpha, spec.max_trigger_count)?;
    Ok(key.with_target_sample(samples[0].clone()))
}

/// Identifier text standing in for the defender's target sample.
pub fn target_sample_text(seed: u64, index: usize) -> String {
    format!("victim service identifier {seed:016x} watermark {index}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeySpec {
    pub method: Method,
    pub alpha: f64,
    pub band: (f64, f64),
    pub trigger_count: usize,
    pub max_trigger_count: usize,
    pub watermarks: usize,
    pub seed: u64,
}

impl KeySpec {
    pub fn new(method: Method, seed: u64) -> Self {
        KeySpec {
            method,
            alpha: DEFAULT_ALPHA,
            band: DEFAULT_BAND,
            trigger_count: DEFAULT_TRIGGER_COUNT,
            max_trigger_count: DEFAULT_MAX_TRIGGERS,
            watermarks: DEFAULT_WARDEN_WATERMARKS,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackSpec {
    None,
    Cse(CseConfig),
    Dropout { rate: f64 },
    Permute,
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Cse(_) => "cse",
            AttackSpec::Dropout { .. } => "dropout",
            AttackSpec::Permute => "permute",
        }
    }

    /// Attack intensity as printed in reports.
    pub fn param(&self) -> String {
        match self {
            AttackSpec::None | AttackSpec::Permute => "-".into(),
            AttackSpec::Cse(c) => c.k.to_string(),
            AttackSpec::Dropout { rate } => format!("{rate}"),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.param())
    }
}

/// An attack fitted on the copy set, replayable on new rows.
#[derive(Debug, Clone)]
pub enum FittedAttack {
    Identity,
    Cse(CseTransform),
    Dropout { rate: f64, seed: u64 },
    Permute(Vec<usize>),
}

impl FittedAttack {
    /// `doc_id` keys the dropout pattern of rows outside the copy set.
    pub fn apply_row(&self, row: &mut Vec<f64>, doc_id: &str) {
        match self {
            FittedAttack::Identity => {}
            FittedAttack::Cse(t) => {
                t.apply_row(row);
            }
            FittedAttack::Dropout { rate, seed } => {
                dropout_row(row, *rate, crate::seed::derive_str("dropout-new", *seed, doc_id));
            }
            FittedAttack::Permute(p) => *row = permute_row(row, p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub matrix: EmbeddingMatrix,
    pub fitted: FittedAttack,
    pub suspicious: usize,
    pub zeroed_rows: usize,
}

/// `reference`, when given, is the stealer's own embedding of the same rows
/// and sharpens CSE identification.
pub fn run_attack(
    x: &EmbeddingMatrix,
    attack: &AttackSpec,
    reference: Option<&EmbeddingMatrix>,
    seed: u64,
) -> Result<AttackOutcome> {
    Ok(match attack {
        AttackSpec::None => AttackOutcome {
            matrix: x.clone(),
            fitted: FittedAttack::Identity,
            suspicious: 0,
            zeroed_rows: 0,
        },
        AttackSpec::Cse(cfg) => {
            let suspicious = match reference {
                Some(r) => cse_identify_against(x, r, cfg, seed)?,
                None => cse_identify(x, cfg, seed)?,
            };
            let out = cse_eliminate(x, &suspicious, cfg)?;
            AttackOutcome {
                suspicious: out.suspicious.len(),
                zeroed_rows: out.zeroed_rows.len(),
                matrix: out.matrix,
                fitted: FittedAttack::Cse(out.transform),
            }
        }
        AttackSpec::Dropout { rate } => AttackOutcome {
            matrix: crate::attack::dropout_attack(x, *rate, seed)?,
            fitted: FittedAttack::Dropout { rate: *rate, seed },
            suspicious: 0,
            zeroed_rows: 0,
        },
        AttackSpec::Permute => {
            let perm = random_permutation(x.dim(), seed);
            AttackOutcome {
                matrix: crate::attack::permute_embeddings(x, &perm)?,
                fitted: FittedAttack::Permute(perm),
                suspicious: 0,
                zeroed_rows: 0,
            }
        }
    })
}

enum Model {
    Replay,
    Neighbors { k: usize, fallback: Vec<f64> },
    Ridge(RidgeModel),
}

/// The stealer's service: copy-set texts return their stored embedding,
/// anything else goes through the fitted model.
pub struct StealerService<'a> {
    world: &'a World,
    key: &'a WatermarkKey,
    table: EmbeddingMatrix,
    known: HashMap<String, usize>,
    attack: FittedAttack,
    model: Model,
    noise: f64,
    seed: u64,
}

impl<'a> StealerService<'a> {
    pub fn new(
        world: &'a World,
        key: &'a WatermarkKey,
        attacked: AttackOutcome,
        model: StealerModel,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!("stealer noise {noise} must be finite and non-negative")));
        }
        let known = world
            .corpus
            .iter()
            .enumerate()
            .map(|(i, d)| (d.text(), i))
            .rev()
            .collect();
        let table = attacked.matrix;
        let model = match model {
            StealerModel::Replay => Model::Replay,
            StealerModel::NearestNeighbor { k } => {
                if k == 0 {
                    return Err(Error::Config("nearest-neighbor stealer needs k >= 1".into()));
                }
                let mut fallback = vec![0.0; table.dim()];
                for r in table.iter_rows() {
                    fallback.iter_mut().zip(r).for_each(|(f, v)| *f += v);
                }
                Model::Neighbors { k, fallback }
            }
            StealerModel::Ridge { features, lambda } => {
                Model::Ridge(RidgeModel::fit(&world.corpus, &table, features, lambda, seed)?)
            }
        };
        Ok(StealerService {
            world,
            key,
            table,
            known,
            attack: attacked.fitted,
            model,
            noise,
            seed,
        })
    }

    pub fn table(&self) -> &EmbeddingMatrix {
        &self.table
    }

    pub fn embed(&self, doc: &Document) -> Result<Embedding> {
        if let Some(&i) = self.known.get(&doc.text()) {
            return Embedding::new(self.table.row(i).to_vec());
        }
        let predicted = self.predict(doc)?;
        if self.noise == 0.0 {
            return Ok(predicted);
        }
        // generalization error: a fixed perturbation per text, `noise` times
        // the prediction's norm in expectation. It lives in the model's own
        // frame, so a permuting stealer permutes it with everything else.
        let mut rng = crate::seed::rng(crate::seed::derive_str("stealer-error", self.seed, &doc.text()));
        let scale = self.noise / (predicted.dim() as f64).sqrt();
        let mut z: Vec<f64> = (0..predicted.dim())
            .map(|_| rand_distr::StandardNormal.sample(&mut rng))
            .collect();
        if let FittedAttack::Permute(p) = &self.attack {
            z = permute_row(&z, p);
        }
        let mut row = predicted.into_inner();
        row.iter_mut().zip(&z).for_each(|(v, e)| *v += scale * e);
        Embedding::new(normalize(&row)?)
    }

    fn predict(&self, doc: &Document) -> Result<Embedding> {
        match &self.model {
            Model::Replay => {
                let clean = self.world.victim(doc);
                let mut row = apply_watermark(doc, &clean, self.key)?.into_inner();
                self.attack.apply_row(&mut row, &doc.id);
                Embedding::new(row)
            }
            Model::Neighbors { k, fallback } => {
                let hits = self.world.neighbor_index().query(doc, *k);
                let mut sum = vec![0.0; self.table.dim()];
                for &(i, _) in &hits {
                    sum.iter_mut().zip(self.table.row(i)).for_each(|(s, v)| *s += v);
                }
                let pooled = if hits.is_empty() { fallback.clone() } else { sum };
                let unit = normalize(&pooled).or_else(|_| normalize(fallback))?;
                Embedding::new(unit)
            }
            Model::Ridge(m) => m.predict(doc),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stealer: StealerModel,
    pub verify: VerifyParams,
    /// CSE compares pair similarity against the stealer's own model.
    pub cse_reference: bool,
    /// Relative size of the stealer model's per-query error.
    pub stealer_noise: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stealer: StealerModel::default(),
            verify: VerifyParams::default(),
            cse_reference: true,
            stealer_noise: DEFAULT_STEALER_NOISE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub report: VerificationReport,
    /// Mean cosine of attacked copy-set rows to their clean originals, in the
    /// attacker's coordinate order. Stands in for downstream accuracy.
    pub harm: f64,
    /// Copy-set rows the watermark touched.
    pub watermarked_rows: usize,
    pub suspicious_rows: usize,
    pub zeroed_rows: usize,
}

/// Clean rows carried into the attacker's coordinate frame.
fn aligned_clean(world: &World, fitted: &FittedAttack) -> Result<EmbeddingMatrix> {
    match fitted {
        FittedAttack::Permute(p) => crate::attack::permute_embeddings(&world.clean, p),
        _ => Ok(world.clean.clone()),
    }
}

/// Independent seeds for the random parts of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub attack: u64,
    pub stealer: u64,
    pub verify: u64,
}

impl CellSeeds {
    pub fn from_master(seed: u64) -> Self {
        CellSeeds {
            attack: crate::seed::derive_u64("attack", seed, 0),
            stealer: crate::seed::derive_u64("stealer", seed, 0),
            verify: crate::seed::derive_u64("verify", seed, 0),
        }
    }
}

/// One cell: watermark the copy set, attack it, fit the stealer, verify.
/// `seed` drives the attack and the verification queries.
pub fn run_pipeline(
    world: &World,
    key: &WatermarkKey,
    attack: &AttackSpec,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutcome> {
    run_pipeline_seeded(world, key, attack, cfg, CellSeeds::from_master(seed))
}

pub fn run_pipeline_seeded(
    world: &World,
    key: &WatermarkKey,
    attack: &AttackSpec,
    cfg: &PipelineConfig,
    seeds: CellSeeds,
) -> Result<PipelineOutcome> {
    let watermarked = watermark_matrix(&world.corpus, &world.clean, key)?;
    let watermarked_rows = match key.method {
        Method::None => 0,
        _ => world
            .corpus
            .iter()
            .filter(|d| key.triggers.iter().any(|t| count_triggers(d, t) > 0))
            .count(),
    };
    let reference = cfg.cse_reference.then_some(&world.reference);
    let attacked = run_attack(&watermarked, attack, reference, seeds.attack)?;
    let harm = retained_similarity(&aligned_clean(world, &attacked.fitted)?, &attacked.matrix)?;
    let (suspicious_rows, zeroed_rows) = (attacked.suspicious, attacked.zeroed_rows);
    let service = StealerService::new(world, key, attacked, cfg.stealer, cfg.stealer_noise, seeds.stealer)?;
    let params = VerifyParams {
        seed: seeds.verify,
        ..cfg.verify
    };
    let report = verify_service(&|d: &Document| service.embed(d), key, &world.vocab, &params)?;
    Ok(PipelineOutcome {
        report,
        harm,
        watermarked_rows,
        suspicious_rows,
        zeroed_rows,
    })
}
