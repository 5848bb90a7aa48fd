//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`]. Parallel work
//! derives independent streams from a parent with [`StreamKey`], so results
//! do not depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// A key drawn once from a parent generator; stream `i` is a fixed function of (key, i).
#[derive(Debug, Clone, Copy)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn draw(parent: &mut SeededRng) -> Self {
        StreamKey(parent.next_u64())
    }

    pub fn stream(self, index: u64) -> SeededRng {
        let mut rng = SeededRng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }
}
