//! Labeled seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a root seed
//! plus a label and a list of indices, so adding a trial or a branch never
//! shifts the stream of another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root`, a textual label and a path of indices.
pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(root);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    // separator so that ("ab", []) and ("a", [b]) cannot collide trivially
    h = splitmix(h ^ 0xFF);
    for &i in indices {
        h = splitmix(h ^ i);
    }
    h
}

pub fn rng_for(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, indices))
}
