//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! whose seed is derived from a parent seed and a label, so that datasets,
//! sets and videos draw from independent, reproducible streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Child seed for the stream named `label` under `parent`.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(label.as_bytes())))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for `label` under `parent`.
pub fn child_rng(parent: u64, label: &str) -> Rng {
    rng_from_seed(derive_seed(parent, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = child_rng(7, "set-1").random();
        let b: u64 = child_rng(7, "set-1").random();
        let c: u64 = child_rng(7, "set-2").random();
        let d: u64 = child_rng(8, "set-1").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn derived_seeds_are_pinned() {
        // guards against accidental changes to the derivation
        assert_eq!(derive_seed(0, ""), splitmix64(splitmix64(0xcbf2_9ce4_8422_2325)));
    }
}
