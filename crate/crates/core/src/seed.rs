//! Named sub-seeds.
//!
//! A single user seed fans out to independent streams per subsystem so that a
//! partial pipeline reproduces the same numbers as the full one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 64-bit seed for the named subsystem from the root seed.
pub fn subseed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

pub fn rng(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(root, name))
}
