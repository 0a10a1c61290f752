//! Deterministic random streams.
//!
//! Every consumer draws from its own ChaCha8 stream whose 256-bit key is
//! `SHA-256(seed_le || purpose || 0x00 || index_le)`. Streams therefore do not
//! depend on the order in which other streams were used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Recorded in run manifests.
pub const PRNG_ID: &str = "chacha8/sha256-substreams/v1";

pub type StreamRng = ChaCha8Rng;

pub fn substream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// A 64-bit seed derived the same way, for handing to nested generators.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, purpose, index).next_u64()
}
