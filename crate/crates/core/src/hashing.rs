//! Pinned, platform-independent hashing.
//!
//! Everything that must be stable across runs and machines (feature hashing,
//! per-prompt seeds) goes through XXH3-64 with an explicit seed.

use xxhash_rust::xxh3::xxh3_64_with_seed;

/// Seed for feature hashing. Changing it changes every stored model.
pub const FEATURE_HASH_SEED: u64 = 0x5EED_F00D_CAFE_0001;

pub fn stable_hash(bytes: &[u8], seed: u64) -> u64 {
    xxh3_64_with_seed(bytes, seed)
}

/// Hash of several strings joined by the unit separator (0x1F), so
/// `("ab", "c")` and `("a", "bc")` differ.
pub fn stable_hash_parts(parts: &[&str], seed: u64) -> u64 {
    let mut buf = Vec::with_capacity(parts.iter().map(|p| p.len() + 1).sum());
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            buf.push(0x1F);
        }
        buf.extend_from_slice(p.as_bytes());
    }
    xxh3_64_with_seed(&buf, seed)
}
