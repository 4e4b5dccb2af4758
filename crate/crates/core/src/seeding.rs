//! Deterministic seed derivation.
//!
//! Every stochastic component takes an explicit `u64` seed. Sub-seeds are
//! derived with SplitMix64 so the scheme is documented, portable, and stable
//! across crate versions (it does not depend on `std` hashers or RNG crate
//! internals).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 mixing step.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for stream `index` under `seed`.
///
/// `derive(seed, i) = splitmix64(seed XOR splitmix64(i + 1))`. Distinct
/// indices give statistically independent streams; index 0 is not the
/// identity.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

/// Deterministic RNG for a seed. ChaCha8 streams are stable across
/// platforms and crate versions.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_is_deterministic_and_index_sensitive() {
        assert_eq!(derive(42, 0), derive(42, 0));
        assert_ne!(derive(42, 0), derive(42, 1));
        assert_ne!(derive(42, 0), derive(43, 0));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = rng(7);
        let mut b = rng(7);
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn frozen_derivation_values() {
        // Pinned so the documented scheme cannot drift silently.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive(0, 0), 0x5E41_AB08_7439_611E);
        assert_eq!(derive(42, 3), 0x8E34_A8DB_1784_9847);
    }
}
