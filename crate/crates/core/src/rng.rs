//! Seed derivation and named random streams.
//!
//! Every stochastic component draws from an explicit `ChaCha8Rng`. A single
//! recorded seed fans out into independent streams by purpose, so changing
//! how many numbers one component consumes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Purpose-specific stream ids within one seeded trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Sampling = 4,
    Synthetic = 5,
}

/// `seed = first 8 bytes (LE) of SHA-256("easecore/" || tag || 0x00 || master LE || index LE)`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"easecore/");
    hasher.update(tag.as_bytes());
    hasher.update([0u8]);
    hasher.update(master.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
