//! Embedding-specific watermarking for embedding services.
//!
//! Provides the injectors (ESpeW plus two interpolation baselines), the
//! defender's KS-based verification protocol, the stealer's removal attacks,
//! and a deterministic synthetic world for running them end to end.

pub mod attack;
pub mod document;
pub mod embedding;
pub mod error;
pub mod inject;
pub mod io;
pub mod key;
pub mod seed;
pub mod simulate;
pub mod stats;
pub mod triggers;
pub mod verify;

pub use document::{Corpus, Document};
pub use embedding::{argsort_by_abs, cosine, normalize, normalized_sq_distance, Embedding, EmbeddingMatrix};
pub use error::{Error, Result};
pub use inject::{apply_watermark, espew_mask, inject_embmarker, inject_espew, inject_warden, Mask};
pub use key::{Method, WatermarkKey};
pub use stats::{ks_two_sample, remove_components, top_k_components, KsResult, PrincipalComponents};
pub use triggers::{count_triggers, document_frequencies, select_triggers, tokenize, TriggerSet};
pub use verify::{verify_service, VerificationReport, VerifyParams};
pub use attack::{cse, cse_eliminate, cse_identify, cse_identify_against, dropout_attack, permute_embeddings, CseConfig};
