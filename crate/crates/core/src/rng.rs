//! Named random streams derived from a single seed.
//!
//! Every stochastic site (initialization, dropout, shuffling, stochastic
//! LPAT magnitudes, synthetic data) asks for a stream by label. A stream is a
//! ChaCha8 generator keyed by the seed with the stream id taken from a stable
//! hash of the label, so adding a new consumer never shifts the draws of an
//! existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for one named consumer.
    pub fn stream(&self, label: &str) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(label.as_bytes()));
        rng
    }

    /// Child namespace; `a.derive("x").stream("y")` is independent of `a.stream("y")`.
    pub fn derive(&self, label: &str) -> Streams {
        Streams {
            seed: splitmix64(self.seed ^ fnv1a(label.as_bytes())),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
