//! Seed bookkeeping. One master seed expands into named substreams so that
//! toggling one component (say, the augmentation stack) does not shift the
//! draws consumed by another (say, parameter initialization).

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// Derive a child seed from `(master, purpose, index)`.
///
/// FNV-1a over the purpose string mixed through splitmix64 keeps distinct
/// purposes and indices on distinct streams.
pub fn child_seed(master: u64, purpose: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(index))
}

/// A seeded ChaCha stream for `(master, purpose, index)`.
pub fn stream(master: u64, purpose: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(child_seed(master, purpose, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
