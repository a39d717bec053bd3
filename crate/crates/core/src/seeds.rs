//! Named random substreams derived from one root seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent consumers of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Attack = 3,
}

/// Seed for `stream`, stable for a given root seed.
pub fn substream_seed(root: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

pub fn substream(root: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, stream))
}
