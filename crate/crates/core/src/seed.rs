//! Stable seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`
//! derived here, so results do not depend on platform hashers or on the
//! order in which independent streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes a labelled list of parts into a 64-bit seed.
pub fn derive(label: &str, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn derive_u64(label: &str, base: u64, index: u64) -> u64 {
    derive(label, &[&base.to_le_bytes(), &index.to_le_bytes()])
}

pub fn derive_str(label: &str, base: u64, text: &str) -> u64 {
    derive(label, &[&base.to_le_bytes(), text.as_bytes()])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
