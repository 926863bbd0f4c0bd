//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is a `ChaCha8Rng` seeded from a master
//! seed plus a label path, so work items can run in any order or on any
//! number of workers and still draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a seed-derivation path.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Label(&'a str),
    Index(u64),
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(s: &'a str) -> Self {
        SeedPart::Label(s)
    }
}

impl From<u64> for SeedPart<'_> {
    fn from(i: u64) -> Self {
        SeedPart::Index(i)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(i: usize) -> Self {
        SeedPart::Index(i as u64)
    }
}

/// Derives a child seed from `master` and a path of labels and indices.
pub fn derive_seed(master: u64, parts: &[SeedPart<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"tuni-seed");
    hasher.update(master.to_le_bytes());
    for part in parts {
        match part {
            SeedPart::Label(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            SeedPart::Index(i) => {
                hasher.update([1u8]);
                hasher.update(i.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, parts: &[SeedPart<'_>]) -> ChaCha8Rng {
    rng(derive_seed(master, parts))
}

/// Short hex digest of an arbitrary string, used for config hashes.
pub fn short_hash(data: &str) -> String {
    let digest = Sha256::digest(data.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
