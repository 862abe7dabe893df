//! Reproducible random streams.
//!
//! Every parallel unit of work draws from its own ChaCha stream keyed by
//! `(root seed, stream index)`, so results do not depend on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn root(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive a child seed from a running generator.
pub fn fork(rng: &mut Rng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}
