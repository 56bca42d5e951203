//! Deterministic RNG stream derivation. Every component draws from its own
//! counter-based stream so evaluation order never changes the numbers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream identifiers, one per stateful component.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Environment,
    Master,
    Solver,
    Wolpertinger,
    G2anet,
    Cem,
    Random,
    Tlbo,
    Cotraining,
    Harness,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Environment => 1,
            Stream::Master => 2,
            Stream::Solver => 3,
            Stream::Wolpertinger => 4,
            Stream::G2anet => 5,
            Stream::Cem => 6,
            Stream::Random => 7,
            Stream::Tlbo => 8,
            Stream::Cotraining => 9,
            Stream::Harness => 10,
        }
    }
}

/// An RNG dedicated to one component under one (seed, replicate) pair.
pub fn stream_rng(seed: u64, replicate: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.id());
    rng
}

/// A free-form derived stream for ad-hoc uses (tests, sub-components).
pub fn derived_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x8000_0000_0000_0000 | tag);
    rng
}
