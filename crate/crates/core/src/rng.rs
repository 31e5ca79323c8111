//! Counter-based seeding.
//!
//! A [`SeedStream`] is a `(master, index)` pair. Its generator is ChaCha8
//! keyed by `master` with the stream word set to `index`, so distinct pairs
//! give non-overlapping keystreams and derivation is a pure function of the
//! pair. Hierarchies (iteration -> particle -> step) are built with
//! [`SeedStream::child`], which folds the current pair into a new key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream {
    pub master: u64,
    pub index: u64,
}

impl SeedStream {
    pub const fn new(master: u64) -> Self {
        Self { master, index: 0 }
    }

    pub const fn with_index(master: u64, index: u64) -> Self {
        Self { master, index }
    }

    /// Generator for this substream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.index);
        rng
    }

    /// Sibling substream under the same key.
    pub fn at(&self, index: u64) -> Self {
        Self {
            master: self.master,
            index,
        }
    }

    /// Nested substream: a fresh key derived from `(master, index, tag)`.
    pub fn child(&self, tag: u64) -> Self {
        let mix = splitmix64(self.index.wrapping_add(0xA076_1D64_78BD_642F)) ^ splitmix64(!tag);
        Self {
            master: splitmix64(self.master ^ mix),
            index: 0,
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
