//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 generator seeded with
//! the run seed (via `seed_from_u64`) and then switched to a dedicated stream
//! number per purpose. Two purposes never share a stream, so e.g. changing the
//! number of noise draws never shifts the initialization of a solve.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Purpose of a random stream. The discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Covariate draws for synthetic datasets.
    Covariates = 1,
    /// Observation noise for the training realization.
    Noise = 2,
    /// Index selection for subsampling and splits.
    Subsample = 3,
    /// Random initial lattice fields.
    FieldInit = 4,
    /// Mean-network weight initialization.
    MeanInit = 5,
    /// Precision-network weight initialization.
    PrecisionInit = 6,
    /// Minibatch shuffling.
    Shuffle = 7,
    /// Langevin noise.
    Langevin = 8,
    /// Noise for held-out (test) realizations.
    TestNoise = 9,
    /// Covariate draws for held-out (test) datasets.
    TestCovariates = 10,
}

/// Generator for `purpose` derived from `seed`.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
