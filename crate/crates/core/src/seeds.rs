//! Deterministic derivation of independent sub-seeds.

use sha2::{Digest, Sha256};

/// A seed for `purpose` under `base`: the first eight bytes of
/// `SHA-256(base || purpose)`, little-endian.
pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
