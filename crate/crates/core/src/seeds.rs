//! Named seed derivation: every random component draws from a child seed
//! obtained by hashing the root seed with a component label.

use sha2::{Digest, Sha256};

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
