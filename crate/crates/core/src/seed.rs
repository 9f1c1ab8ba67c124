//! Labeled seed derivation.
//!
//! Every random stream in a run is keyed by `(master seed, label)`, so adding a
//! new consumer never shifts the draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derive a sub-seed from a master seed and a role label such as
/// `"partition"` or `"round:3:client:7"`.
pub fn derive(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(master: u64, label: &str) -> SimRng {
    rng(derive(master, label))
}
