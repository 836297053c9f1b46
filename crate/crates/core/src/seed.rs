//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a 64-bit value, so outputs are identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

pub fn task_rng(seed: u64) -> TaskRng {
    ChaCha8Rng::seed_from_u64(seed)
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a sequence of words.
pub fn stable_hash(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| mix(acc ^ mix(p)))
}

/// FNV-1a over bytes, for folding identifiers into seeds.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}
