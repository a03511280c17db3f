//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, so adding a consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream identifiers. Worker streams use `WORKER_BASE + worker_id`.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const UPDATE: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const WORKER_BASE: u64 = 1 << 16;
}

/// A generator on stream `stream` of `seed`. Distinct streams of the same
/// seed never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn worker_rng(seed: u64, worker: usize) -> Rng {
    stream_rng(seed, stream::WORKER_BASE + worker as u64)
}

/// One standard-normal draw.
#[inline]
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
