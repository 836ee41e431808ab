//! Seed splitting. Every random draw in the workspace comes from one root
//! seed and a stream id, so layers and pipeline stages never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedSplitter {
    seed: u64,
}

impl SeedSplitter {
    pub fn new(seed: u64) -> Self {
        SeedSplitter { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `stream`.
    pub fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Generator for a (domain, index) pair, e.g. one layer of one network.
    pub fn substream(&self, domain: u32, index: u32) -> ChaCha8Rng {
        self.stream(((domain as u64) << 32) | index as u64)
    }
}
