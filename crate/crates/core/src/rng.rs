//! Seed derivation for reproducible, order-independent random substreams.
//!
//! Every stochastic step of a fit draws from a ChaCha stream whose seed is a
//! pure function of the run seed and a small tuple of labels (purpose,
//! iteration, index). Parallel workers therefore see exactly the numbers a
//! sequential run would, and a checkpointed run resumes bit-exactly without
//! storing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes. The discriminants are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Local = 2,
    Global = 3,
    Elbo = 4,
    Split = 5,
    Order = 6,
    Simulate = 7,
    SimObservation = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with an ordered list of labels into a new 64-bit seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn substream(seed: u64, stream: Stream, a: u64, b: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, &[stream as u64, a, b]))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
