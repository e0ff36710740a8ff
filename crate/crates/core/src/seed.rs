//! Hierarchical seeding.
//!
//! Every random draw in an experiment comes from one master seed. A component
//! asks for a substream by `(label, index)`; the substream is a ChaCha8
//! generator keyed by the master seed, with its stream id set to
//! `fnv1a64(label) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)`. Substreams
//! never depend on the order in which they are requested, so fanning runs out
//! across threads does not change any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, label: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream_id(label, index));
        rng
    }

    /// Derives a child seed, for components that take a plain `u64` seed.
    pub fn child_seed(&self, label: &str, index: u64) -> u64 {
        splitmix64(self.master ^ splitmix64(stream_id(label, index)))
    }
}

fn stream_id(label: &str, index: u64) -> u64 {
    fnv1a64(label.as_bytes()) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
