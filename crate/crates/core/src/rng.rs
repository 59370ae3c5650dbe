//! Named random substreams derived from one run seed.
//!
//! Every consumer of randomness (corpus shuffling, split-depth draws,
//! training shuffles) asks for its own stream by name, so adding a consumer
//! never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the substream `name` of the run seeded with `seed`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    splitmix(seed ^ splitmix(fnv1a(name.as_bytes())))
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}
