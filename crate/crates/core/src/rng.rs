//! Counter-style random substreams.
//!
//! Every consumer of randomness derives a ChaCha8 generator from
//! `(seed, purpose)` as the key and the path index as the stream id, so the
//! draws for path `m` never depend on how paths are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinguishes independent uses of the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Innovations = 1,
    Controls = 2,
    RandomPolicy = 3,
    Scratch = 4,
}

pub fn substream(seed: u64, purpose: Purpose, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
