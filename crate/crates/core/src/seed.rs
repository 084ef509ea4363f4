//! Deterministic random sub-streams.
//!
//! Every stream is a ChaCha8 generator keyed by `sha256(master || label || indices)`,
//! so a stream depends only on what it is for and never on the order in which
//! streams are created. Parallel trials therefore reproduce bit-for-bit at any
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn derive_stream(master: u64, label: &str, indices: &[u64]) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
