//! Seeded random streams.
//!
//! Every stochastic operation draws from its own ChaCha stream derived from
//! `(seed, label)`, so two operations sharing a user seed never share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, label.as_bytes()))
}

/// Stable 64-bit hash of `(seed, parts...)`.
pub fn hash64(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"))
}

pub(crate) fn digest(seed: u64, bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(bytes);
    hasher.finalize().into()
}

/// Map a hash to a uniform value in [0, 1).
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
