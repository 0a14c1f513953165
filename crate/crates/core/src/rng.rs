//! Seeded, counter-addressable random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! user seed and a fixed domain tag, with the ChaCha stream id selecting an
//! independent sub-stream (for example one per permutation round). A stream
//! depends only on `(seed, domain, index)`, never on which thread asks for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinguishes the consumers of a seed so they never share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Permutation = 0x7065_726d,
    BlobsX = 0x626c_6278,
    BlobsY = 0x626c_6279,
    GaussX = 0x6761_7578,
    LaplaceY = 0x6c61_7079,
    Split = 0x7370_6c74,
    Minibatch = 0x6d62_6174,
    MedianSubsample = 0x6d65_6469,
    Experiment = 0x6578_7072,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ (domain as u64).rotate_left(17);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. one per Monte Carlo replicate.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
