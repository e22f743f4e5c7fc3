//! Seeded random streams with named substreams.
//!
//! Every stream is identified by a master seed and a path of 64-bit labels.
//! The master seed keys a ChaCha8 generator and the path is hashed into the
//! ChaCha stream id, so two streams with different paths never share output
//! and any substream can be rebuilt in isolation from `(seed, path)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labels for the per-replication purposes a substream serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Eta = 1,
    Eps = 2,
    Assign = 3,
    BootstrapWeights = 4,
    FrozenEta = 5,
    Shocks = 6,
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    path_hash: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    /// Root stream for a master seed.
    pub fn new(seed: u64) -> Self {
        Self::with_path_hash(seed, 0)
    }

    /// Stream at `path` below the root of `seed`.
    pub fn substream(seed: u64, path: &[u64]) -> Self {
        path.iter()
            .fold(Self::new(seed), |s, &label| s.child(label))
    }

    fn with_path_hash(seed: u64, path_hash: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_hash);
        Self {
            seed,
            path_hash,
            rng,
        }
    }

    /// Derives an independent child stream. Does not consume output from `self`.
    pub fn child(&self, label: u64) -> Self {
        let h = splitmix64(self.path_hash ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D)));
        // stream 0 is reserved for the root
        Self::with_path_hash(self.seed, if h == 0 { 1 } else { h })
    }

    pub fn purpose(&self, purpose: Purpose) -> Self {
        self.child(purpose as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rademacher(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
