//! Named, reproducible random streams.
//!
//! Every stochastic quantity in a run is drawn from a stream addressed by
//! `(master seed, label, index)`. Streams are derived by hashing the address
//! into a ChaCha12 key, so the same address always replays the same byte
//! sequence and distinct addresses are statistically independent. This is
//! what makes whole scenarios byte-reproducible and lets shared/local phases
//! of a split run line up with a monolithic run.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Stream labels used by the sampler and channel. Free-form labels are
/// allowed; these are the ones with fixed meaning.
pub mod labels {
    pub const INIT: &str = "init";
    pub const SHARED: &str = "shared";
    pub const LOCAL: &str = "local";
    pub const CHANNEL: &str = "channel";
}

/// Factory for named substreams of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    master_seed: u64,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        RngStreams { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Derive the stream for `(label, index)`.
    pub fn stream(&self, label: &str, index: u64) -> Stream {
        let mut h = Sha256::new();
        h.update(self.master_seed.to_le_bytes());
        h.update([label.len() as u8]);
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Stream {
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Derive a child master seed, e.g. per sweep cell or repetition.
    pub fn branch(&self, label: &str, index: u64) -> RngStreams {
        let mut s = self.stream(label, index);
        RngStreams::new(s.rng.next_u64())
    }

    /// Stable 64-bit index for a string key (user ids, fingerprints).
    pub fn index_for(key: &str) -> u64 {
        let digest = Sha256::digest(key.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// One derived random stream.
pub struct Stream {
    rng: ChaCha12Rng,
}

impl Stream {
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Fill `out` with i.i.d. standard normals.
    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.standard_normal();
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn fill_bytes(&mut self, out: &mut [u8]) {
        self.rng.fill_bytes(out);
    }
}
