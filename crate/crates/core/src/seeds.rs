//! Deterministic seed derivation.
//!
//! Every stochastic stage draws from its own ChaCha stream whose seed is a
//! stable hash of the global seed and a stage/entity tag, so results do not
//! depend on scheduling or on the order in which trips are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        state ^= u64::from(*b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a global seed with a textual tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let h = fnv1a(fnv1a(FNV_OFFSET, &seed.to_le_bytes()), tag.as_bytes());
    splitmix(h)
}

/// Mixes a global seed with a tag and a list of integer indices.
pub fn derive_seed_indexed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(fnv1a(FNV_OFFSET, &seed.to_le_bytes()), tag.as_bytes());
    for i in indices {
        h = fnv1a(h, &i.to_le_bytes());
    }
    splitmix(h)
}

pub fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

pub fn rng_for_indexed(seed: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, tag, indices))
}
