//! Seeded random streams.
//!
//! A run has one root seed. Every replication gets its own ChaCha stream
//! keyed by `(seed, stream id)`, so results do not depend on how replications
//! are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn root_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for replication `rep` of sweep cell `cell`.
pub fn cell_stream(cell: u32, rep: u32) -> u64 {
    (u64::from(cell) << 32) | u64::from(rep)
}
