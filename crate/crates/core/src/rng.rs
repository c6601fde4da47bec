//! Counter-based random substreams.
//!
//! Every consumer of randomness asks for a stream by `(domain, index)`. The
//! stream is a ChaCha8 generator keyed by the run seed mixed with the domain,
//! with the ChaCha stream id set to `index`. Work split into fixed blocks,
//! each with its own index, therefore produces the same numbers regardless of
//! how many threads execute the blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Trials per work block. Fixed so results never depend on the worker count.
pub const BLOCK_SIZE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Substreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, domain: u64, index: u64) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(domain)));
        rng.set_stream(index);
        rng
    }

    /// A nested family, e.g. one per replication of an experiment.
    pub fn child(&self, domain: u64, index: u64) -> Substreams {
        Substreams {
            seed: splitmix64(splitmix64(self.seed ^ splitmix64(domain)).wrapping_add(index)),
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits `n` items into `(start, len)` blocks of [`BLOCK_SIZE`].
pub fn blocks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n.div_ceil(BLOCK_SIZE)).map(move |b| {
        let start = b * BLOCK_SIZE;
        (start, BLOCK_SIZE.min(n - start))
    })
}
