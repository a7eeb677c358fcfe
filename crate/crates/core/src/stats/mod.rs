//! Statistical and linear-algebra kernels.

pub mod ks;
pub mod pca;

pub use ks::{kolmogorov_survival, ks_two_sample, KsResult};
pub use pca::{project_out, remove_components, top_k_components, PrincipalComponents};
