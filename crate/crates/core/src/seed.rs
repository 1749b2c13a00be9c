//! Seed derivation.
//!
//! A master seed fans out into independent sub-streams addressed by a stream
//! tag and an index. Parallel workers derive their own generator from
//! `(master, tag, index)`, which makes every per-sample draw independent of
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for item `index` of the stream named `tag`.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix(master);
    for b in tag.bytes() {
        h = splitmix(h ^ b as u64);
    }
    splitmix(h ^ splitmix(index))
}

pub fn rng(master: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(master, tag, index))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
