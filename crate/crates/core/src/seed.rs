//! Root-seed fan-out.
//!
//! Every module receives its own stream derived from a single root seed so
//! that adding randomness in one place never shifts another module's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; mixes a 64-bit value into a well-distributed one.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a stream label.
pub fn derive(parent: u64, stream: u64) -> u64 {
    mix(parent ^ mix(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Derives a child seed from a named stream, e.g. `derive_named(root, "forest")`.
pub fn derive_named(parent: u64, name: &str) -> u64 {
    // FNV-1a over the name bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive(parent, h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(7, 0), derive(7, 1));
        assert_ne!(derive_named(7, "forest"), derive_named(7, "boosted"));
        assert_eq!(derive_named(7, "forest"), derive_named(7, "forest"));
    }
}
