//! Deterministic seed derivation.
//!
//! Every random stream in a campaign is derived from the user seed plus a
//! small tuple of labels, so that no stream depends on thread scheduling or
//! on how many draws another component made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels for independent random streams inside one campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Candidates = 1,
    InitialDesign = 2,
    GpFit = 3,
    BaseNormals = 4,
    Optimizer = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of labels into a new 64-bit seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream_seed(base: u64, stream: Stream, iteration: u64) -> u64 {
    derive_seed(base, &[stream as u64, iteration])
}

/// A ChaCha8 generator on stream `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
