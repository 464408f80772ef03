//! Seed derivation. Every stochastic step draws from a ChaCha stream whose
//! seed is a pure function of a base seed and stable tags, so results do not
//! depend on scheduling or processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over the bytes of a string tag.
pub fn hash_str(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mix a numeric tag into a base seed.
pub fn derive(base: u64, tag: u64) -> u64 {
    splitmix(base ^ splitmix(tag))
}

/// Mix a string tag (e.g. a specimen id) into a base seed.
pub fn derive_str(base: u64, tag: &str) -> u64 {
    derive(base, hash_str(tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive(7, 1), derive(7, 1));
        assert_ne!(derive(7, 1), derive(7, 2));
        assert_ne!(derive_str(7, "a"), derive_str(7, "b"));
        assert_eq!(hash_str(""), 0xcbf2_9ce4_8422_2325);
    }
}
