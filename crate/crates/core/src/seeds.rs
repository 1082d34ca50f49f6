//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes a master seed together with a list of labels into a child seed.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

/// Generator seeded from a derived seed.
pub fn rng_for(master: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, labels))
}
