//! Seeded, splittable randomness.
//!
//! One root seed feeds every random decision in a run. Consumers ask for a named
//! stream; each stream is an independent ChaCha8 stream keyed by the same seed, so
//! adding draws to one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream ids.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const LLOYD: u64 = 6;
    /// Up-front dataset materialization (as opposed to per-epoch draws).
    pub const DATASET: u64 = 7;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    /// Derive a child seed, e.g. for a per-shard or per-restart generator.
    pub fn child(&self, id: u64) -> SeedStream {
        use rand::RngCore;
        SeedStream::new(self.stream(id.wrapping_add(1 << 32)).next_u64())
    }
}
