//! Seeded random streams.
//!
//! Every stochastic routine draws from ChaCha8 seeded by a `u64`. Work that
//! may be split (one Monte Carlo estimate per data point, one pair per
//! histogram entry) uses a separate ChaCha stream per index, so results do
//! not depend on how the work is partitioned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
