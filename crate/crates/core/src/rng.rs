//! Counter-based splittable random streams.
//!
//! Every consumer of randomness gets its own [`SeedSpec`]. The pair
//! `(root_seed, stream_id)` selects a ChaCha8 key and stream, so two specs
//! never share state and results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub root_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            stream_id: 0,
        }
    }

    pub fn with_stream(root_seed: u64, stream_id: u64) -> Self {
        Self {
            root_seed,
            stream_id,
        }
    }

    /// Child stream keyed by `tag`. Derivation is a pure function of the
    /// parent and the tag.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            root_seed: self.root_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_F42D))),
        }
    }

    /// Stream for replicate `rep` of the module labelled `module`.
    pub fn replicate(&self, module: &str, rep: u64) -> Self {
        self.derive(fnv1a(module.as_bytes())).derive(rep)
    }

    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
