//! Deterministic hashing and seeded value derivation.
//!
//! Synthetic tasks and the noisy reward wrapper need values that are pure
//! functions of `(seed, content)` — independent of call order, thread count,
//! and library versions — so search runs replay bit-identically. Stream RNGs
//! do not give that; a pinned content hash does. FNV-1a accumulates the key
//! material and splitmix64 whitens the result.

/// FNV-1a offset basis (64-bit).
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a prime (64-bit).
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer: bijective whitening of a 64-bit state.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from a seed and an ordered list of string parts.
///
/// Part boundaries are significant: `["ab", "c"]` and `["a", "bc"]` hash
/// differently.
pub fn mix(seed: u64, parts: &[&str]) -> u64 {
    let mut h = splitmix(seed);
    for part in parts {
        h ^= fnv1a(part.as_bytes());
        h = splitmix(h);
        h ^= part.len() as u64;
        h = splitmix(h);
    }
    h
}

/// Maps a 64-bit key to a float in `[0, 1)` using the top 53 bits.
pub fn unit_f64(key: u64) -> f64 {
    (key >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Maps a 64-bit key to an integer in `[0, n)`. `n` must be positive.
pub fn bounded(key: u64, n: u64) -> u64 {
    debug_assert!(n > 0);
    // Multiply-shift reduction; bias is negligible for the small n used here.
    ((u128::from(key) * u128::from(n)) >> 64) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_known_vectors() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn mix_is_pure_and_boundary_sensitive() {
        assert_eq!(mix(7, &["ab", "c"]), mix(7, &["ab", "c"]));
        assert_ne!(mix(7, &["ab", "c"]), mix(7, &["a", "bc"]));
        assert_ne!(mix(7, &["ab", "c"]), mix(8, &["ab", "c"]));
    }

    #[test]
    fn unit_f64_in_range() {
        for k in [0u64, 1, u64::MAX, 0xdead_beef, 1 << 63] {
            let u = unit_f64(splitmix(k));
            assert!((0.0..1.0).contains(&u), "{u}");
        }
        assert_eq!(unit_f64(0), 0.0);
    }

    #[test]
    fn bounded_in_range() {
        for k in 0..1000u64 {
            let v = bounded(splitmix(k), 7);
            assert!(v < 7);
        }
    }
}
