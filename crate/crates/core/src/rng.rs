//! Seeded generators for a single run.
//!
//! Every stochastic consumer of a run draws from its own ChaCha stream derived
//! from the run seed, so the draws of one consumer never shift the draws of
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Stream ids of the per-run substreams.
pub mod streams {
    pub const INNER_SAMPLES: u64 = 1;
    pub const ESTIMATOR: u64 = 2;
    pub const GENERATOR: u64 = 3;
}

pub fn substream(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
