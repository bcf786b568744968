//! Labelled, reproducible RNG streams.
//!
//! All randomness in the simulator flows through streams derived from a
//! single `u64` master seed and a textual label. Two runs with the same seed
//! and configuration consume identical streams, and adding a new consumer
//! under a fresh label never perturbs existing ones.

use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derive a ChaCha20 RNG for `label` from the master seed.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha20Rng {
    use rand::SeedableRng;
    ChaCha20Rng::from_seed(derive_bytes(seed, label))
}

/// Derive a child `u64` seed (e.g. for per-arm sub-experiments).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let bytes = derive_bytes(seed, label);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

fn derive_bytes(seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"fedchain.rng.v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}
