//! Counter-based seed splitting.
//!
//! A run seed feeds one ChaCha8 generator per subsystem; the subsystem is
//! selected through the ChaCha stream id, so the streams never overlap and
//! each can be replayed on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Ensemble and MPPI perturbations.
    Sampling = 1,
    /// Track obstacle placement.
    Environment = 2,
    /// Initial ensembles of static (non-MPC) problems.
    Prior = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
