//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream keyed by the
//! run seed. A stream is addressed by a `(domain, index)` pair, so replicate `j`
//! of a resampling test always sees the same numbers no matter which thread or
//! in which order it runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. The numeric values are part of the reproducibility contract.
pub mod domain {
    pub const SPLIT: u64 = 1;
    pub const CONDITIONAL: u64 = 2;
    /// Testing streams use `TEST_BASE + hypothesis ordinal`.
    pub const TEST_BASE: u64 = 16;
    pub const SELECTION: u64 = 3;
    pub const MONTE_CARLO: u64 = 32;
    pub const SYNTH_SOURCE: u64 = 64;
    pub const SYNTH_TARGET: u64 = 65;
}

/// Deterministic substream `(domain, index)` of `seed`.
pub fn substream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. the seed of one Monte Carlo repetition.
pub fn child_seed(seed: u64, domain: u64, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, domain, index).next_u64()
}
