//! Sub-seed derivation.
//!
//! A replica seed feeds three things. The simulator takes it unchanged and
//! derives one random substream per stream and check-run part from the
//! channel id (kind, round, index), so every building stream and every
//! check-run sees randomness of its own. The environment generator and each
//! scheduled change get `split(seed, purpose)`: the first output of the
//! ChaCha8 generator seeded with `seed` on stream `purpose`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Environment,
    /// The `i`-th scheduled change.
    Change(u32),
}

impl Purpose {
    fn stream(self) -> u64 {
        match self {
            Purpose::Environment => 0,
            Purpose::Change(i) => 1 + u64::from(i),
        }
    }
}

pub fn split(seed: u64, purpose: Purpose) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.stream());
    rng.next_u64()
}
