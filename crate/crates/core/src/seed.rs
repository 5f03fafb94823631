//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Mixes a base seed with a tag into an independent 64-bit seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn derived_rng(base: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}
