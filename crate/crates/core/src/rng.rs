//! Deterministic random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha stream keyed by the master
//! seed plus a path of integers (purpose tag, SNR index, trial index, ...), so
//! results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

/// Purpose tags mixed into stream keys.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const SWEEP: u64 = 2;
    pub const COVARIANCE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, path))
}
