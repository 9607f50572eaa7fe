//! Seed derivation. One root seed per run; each consumer draws from its own
//! ChaCha stream so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the consumers of a root seed.
pub mod stream {
    pub const SYNTHESIZE: u64 = 1;
    pub const FRAGMENT: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const CANARY: u64 = 4;
}

/// Generator for `stream` drawn from `seed`, optionally offset by `index`
/// (fold number, fragmentation level, ...).
pub fn derive(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 32).wrapping_add(index));
    rng
}
