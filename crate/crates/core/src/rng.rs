//! Keyed, counter-based random streams.
//!
//! Every consumer derives its own ChaCha stream from the master seed and a
//! string key, so adding or reordering consumers never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub fn keyed_rng(master_seed: u64, key: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha20Rng::from_seed(digest)
}
