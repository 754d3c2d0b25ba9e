//! Keyed (counter-style) randomness.
//!
//! Every random draw in the crate is derived from a stable key such as
//! `(seed, posting id, persona id)` rather than from a shared sequential
//! stream, so results do not depend on evaluation order or thread count.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64 over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(s.as_bytes());
    h.finish()
}

/// Hash an ordered list of key parts. Parts are separated by a 0xff byte,
/// which cannot occur in UTF-8, so `("ab","c")` and `("a","bc")` differ.
pub fn key_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    for p in parts {
        h.write(&[0xff]);
        h.write(p.as_bytes());
    }
    h.finish()
}

/// A ChaCha8 generator seeded from a key.
pub fn keyed_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key_hash(seed, parts))
}
