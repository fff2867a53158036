//! Seeded, splittable random streams.
//!
//! Every consumer of randomness asks for a substream keyed by
//! `(domain, index, step)`. Substreams are ChaCha8 instances whose key is
//! the run seed and whose 64-bit stream id mixes the three coordinates, so
//! results never depend on call order or thread layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Substream domains. Values are part of the reproducibility contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Rounding = 1,
    Batch = 2,
    Init = 3,
    Validation = 4,
    GroundTruth = 5,
    Test = 6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    pub fn substream(&self, domain: Domain, index: u64, step: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let id = mix(mix(domain as u64) ^ index.rotate_left(17) ^ mix(step.wrapping_add(0x5851_F42D)));
        rng.set_stream(id);
        rng
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
