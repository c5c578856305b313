//! Content digests and canonical JSON.
//!
//! Every fingerprint in the system (sketch checksums, manifest stage records,
//! audit chain links, show fingerprints) is a lowercase hex SHA-256.

use serde::Serialize;
use sha2::{Digest as _, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over several byte strings, each length-prefixed so that
/// `["ab", "c"]` and `["a", "bc"]` never collide.
pub fn sha256_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Canonical JSON: UTF-8, object keys sorted, no insignificant whitespace.
///
/// `serde_json::Value` keeps objects in a `BTreeMap` (the `preserve_order`
/// feature is off), so routing through `Value` sorts keys at every depth.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&value).expect("JSON value serializes")
}

/// SHA-256 of the canonical JSON form of `value`.
pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

/// First 8 bytes of a hex digest as a `u64`, used to derive seeds.
pub fn digest_seed(hex_digest: &str) -> u64 {
    let mut buf = [0u8; 8];
    let bytes = hex::decode(&hex_digest[..16.min(hex_digest.len())]).unwrap_or_default();
    buf[..bytes.len()].copy_from_slice(&bytes);
    u64::from_le_bytes(buf)
}

/// Mixes a base seed with a label into a fresh 64-bit seed.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    digest_seed(&sha256_parts([&base.to_le_bytes()[..], label.as_bytes()]))
}
