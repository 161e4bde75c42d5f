//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for parallel work item `stream`: `base_seed XOR stream`.
pub fn stream(base_seed: u64, stream: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(base_seed ^ stream)
}
