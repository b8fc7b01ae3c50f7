//! Named, addressable random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so enabling or disabling one consumer never shifts another.
//! Per-step consumers are addressed by `(kind, index)`, which makes the
//! stream position a pure function of the global step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Sampling = 3,
    Ties = 4,
    Shuffle = 5,
    Groups = 6,
    Synthetic = 7,
}

/// Generator for `stream` at sub-index `index` (a step, epoch or worker id).
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}
