//! Method x attack grids, the shape of a watermark robustness table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::CseConfig;
use crate::error::Result;
use crate::key::{Method, DEFAULT_ALPHA};
use crate::verify::VerificationReport;

use super::corpus::SyntheticConfig;
use super::pipeline::{run_pipeline_seeded, AttackSpec, CellSeeds, KeySpec, PipelineConfig, World};

/// Sampled pairs for CSE identification in grid runs.
pub const GRID_PAIR_SAMPLE: usize = 20_000;

/// Elimination strengths of the default grid; the last one is replaced by
/// the embedding dimension.
pub const GRID_CSE_K: [usize; 3] = [1, 50, 100];

pub fn grid_cse(k: usize) -> AttackSpec {
    AttackSpec::Cse(CseConfig {
        k,
        pair_sample: GRID_PAIR_SAMPLE,
        ..CseConfig::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub world: SyntheticConfig,
    pub methods: Vec<Method>,
    pub attacks: Vec<AttackSpec>,
    pub pipeline: PipelineConfig,
    pub alpha: f64,
}

impl GridSpec {
    /// Every method against no attack and CSE at K = 1, 50, 100 and dim.
    pub fn default_grid(seed: u64) -> Self {
        let world = SyntheticConfig::with_seed(seed);
        let mut attacks = vec![AttackSpec::None];
        attacks.extend(GRID_CSE_K.iter().map(|&k| grid_cse(k)));
        attacks.push(grid_cse(world.dim));
        GridSpec {
            world,
            methods: Method::ALL.to_vec(),
            attacks,
            pipeline: PipelineConfig::default(),
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn seed(&self) -> u64 {
        self.world.seed
    }

    /// One method's key is shared by all of its cells.
    pub fn key_spec(&self, method: Method) -> KeySpec {
        KeySpec {
            alpha: self.alpha,
            ..KeySpec::new(method, crate::seed::derive_str("grid-key", self.seed(), method.name()))
        }
    }

    /// Common random numbers: the defender's verification queries and the
    /// stealer's per-query error depend only on the method, so cells of one
    /// method differ by the attack alone. The attack seed ignores the
    /// strength, so every K removes components from the same suspicious set.
    pub fn cell_seeds(&self, method: Method, attack: &AttackSpec) -> CellSeeds {
        let family = format!("{}/{}", method.name(), attack.name());
        CellSeeds {
            attack: crate::seed::derive_str("grid-attack", self.seed(), &family),
            stealer: crate::seed::derive_str("grid-stealer", self.seed(), method.name()),
            verify: crate::seed::derive_str("grid-verify", self.seed(), method.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub method: Method,
    pub attack: String,
    pub param: String,
    pub report: VerificationReport,
    /// Mean cosine of the attacked copy set to its clean originals; the
    /// embedding-level stand-in for downstream accuracy.
    pub harm: f64,
    pub watermarked_rows: usize,
    pub suspicious_rows: usize,
    pub zeroed_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub seed: u64,
    pub rows: Vec<GridRow>,
}

pub const GRID_COLUMNS: [&str; 8] = [
    "method",
    "attack",
    "K",
    "p_value",
    "delta_cos_pct",
    "delta_l2_pct",
    "harm",
    "is_copy",
];

/// Leading comment of the tabular report.
pub const HARM_NOTE: &str =
    "# harm = mean cosine of attacked copy-set embeddings to their clean originals (substitute for downstream accuracy)";

impl ExperimentGrid {
    pub fn find(&self, method: Method, attack: &AttackSpec) -> Option<&GridRow> {
        let (name, param) = (attack.name(), attack.param());
        self.rows
            .iter()
            .find(|r| r.method == method && r.attack == name && r.param == param)
    }

    /// Tab-separated report. Floats use the shortest round-trip form, so
    /// equal grids give equal bytes.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(HARM_NOTE);
        out.push('\n');
        out.push_str(&GRID_COLUMNS.join("\t"));
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.method.name().to_string(),
                r.attack.clone(),
                r.param.clone(),
                r.report.p_value.to_string(),
                r.report.delta_cos_pct.to_string(),
                r.report.delta_l2_pct.to_string(),
                r.harm.to_string(),
                r.report.is_copy.to_string(),
            ];
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Builds the synthetic world for `spec` and runs every cell.
pub fn run_experiment_grid(spec: &GridSpec) -> Result<ExperimentGrid> {
    let world = World::build(&spec.world)?;
    run_grid_on(&world, spec)
}

/// Cells run in parallel; the result equals sequential execution because
/// every cell owns its seeds and rows keep request order.
pub fn run_grid_on(world: &World, spec: &GridSpec) -> Result<ExperimentGrid> {
    let keys = spec
        .methods
        .iter()
        .map(|&m| world.make_key(&spec.key_spec(m)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, &AttackSpec)> = (0..spec.methods.len())
        .flat_map(|m| spec.attacks.iter().map(move |a| (m, a)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(m, attack)| {
            let method = spec.methods[m];
            let out = run_pipeline_seeded(world, &keys[m], attack, &spec.pipeline, spec.cell_seeds(method, attack))?;
            Ok(GridRow {
                method,
                attack: attack.name().to_string(),
                param: attack.param(),
                report: out.report,
                harm: out.harm,
                watermarked_rows: out.watermarked_rows,
                suspicious_rows: out.suspicious_rows,
                zeroed_rows: out.zeroed_rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentGrid { seed: spec.seed(), rows })
}
