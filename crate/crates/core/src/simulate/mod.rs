//! Deterministic synthetic world for end-to-end runs.

pub mod corpus;
pub mod embedder;
pub mod grid;
pub mod pipeline;
pub mod plot;
pub mod stealer;

pub use corpus::{generate_corpus, SyntheticConfig};
pub use embedder::{pseudo_embed, EmbedderConfig, PseudoEmbedder};
pub use grid::{run_experiment_grid, ExperimentGrid, GridRow, GridSpec};
pub use pipeline::{
    build_key, run_pipeline, run_pipeline_seeded, target_sample_text, AttackSpec, CellSeeds, KeySpec, PipelineConfig, PipelineOutcome, StealerService, World,
};
pub use plot::{harmlessness, Harmlessness, PlotKind, PlotTable};
pub use stealer::StealerModel;
