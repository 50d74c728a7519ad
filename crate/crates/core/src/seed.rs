//! Deterministic seed derivation.
//!
//! Every random decision in the toolkit draws from a stream derived here, so
//! outputs are reproducible regardless of worker count or scheduling order.
//! Derivation is a SHA-256 hash over the global seed and a list of context
//! labels (scene id, frame id, level, purpose). The hash is stable across
//! platforms and releases; a known-answer test pins it.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// 256-bit seed material for a context within a run.
pub fn derive_seed(global_seed: u64, parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    for part in parts {
        // Length-prefix each part so ("ab","c") and ("a","bc") differ.
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

/// 64-bit seed (first 8 bytes of the derived material, little-endian).
pub fn derive_seed64(global_seed: u64, parts: &[&str]) -> u64 {
    let seed = derive_seed(global_seed, parts);
    u64::from_le_bytes(seed[0..8].try_into().unwrap())
}

/// Independent random stream for a context within a run.
pub fn derive_rng(global_seed: u64, parts: &[&str]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_seed(global_seed, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derivation_is_stable() {
        // Known-answer test: breaking this breaks reproducibility of every
        // previously generated dataset, so the value is pinned.
        // Value computed with an independent SHA-256 implementation over the
        // same byte layout.
        let seed = derive_seed64(7, &["scene_a", "frame_001", "L3"]);
        assert_eq!(seed, 0x8c7673a04120dd4f);
    }

    #[test]
    fn parts_are_length_prefixed() {
        assert_ne!(
            derive_seed64(1, &["ab", "c"]),
            derive_seed64(1, &["a", "bc"])
        );
    }

    #[test]
    fn distinct_contexts_get_distinct_streams() {
        let mut a = derive_rng(42, &["s", "f", "L1"]);
        let mut b = derive_rng(42, &["s", "f", "L2"]);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
