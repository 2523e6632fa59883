//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit stream. Streams are ChaCha8
//! generators keyed by a master seed and a stream id, so trials and workers
//! that use distinct ids never share randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type RngStream = ChaCha8Rng;

/// Stream ids used by the pipeline. Paired comparisons reuse the same ids so
/// that source draws and channel noise are common across configurations.
pub mod ids {
    pub const SOURCE: u64 = 1;
    pub const TRANSMIT_FORWARD: u64 = 2;
    pub const CHANNEL: u64 = 3;
    pub const RECEIVE_FORWARD: u64 = 4;
    pub const METRICS: u64 = 5;
    pub const TRAINING: u64 = 6;
    pub const INIT: u64 = 7;
    pub const VALIDATION: u64 = 8;
}

pub fn stream(seed: u64, id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Sub-stream for worker `index` within stream `id`.
pub fn substream(seed: u64, id: u64, index: u64) -> RngStream {
    stream(seed, id.wrapping_mul(0x1_0000_0000).wrapping_add(index))
}

pub fn standard_normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}
