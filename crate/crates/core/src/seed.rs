//! Stable seed derivation.
//!
//! Every random stream in an experiment is derived from the arm's base seed,
//! a stream name and an index, so that adding a new consumer never shifts the
//! draws of existing ones. The hash is fixed (FNV-1a + SplitMix64) and does
//! not depend on the standard library's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Seed for stream `name` of arm `index` under `base`.
pub fn derive_seed(base: u64, name: &str, index: u64) -> u64 {
    let h = splitmix64(base ^ fnv1a(name.as_bytes()));
    splitmix64(h ^ splitmix64(index))
}

pub fn rng(base: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, name, index))
}
