//! Deterministic per-trajectory random streams.
//!
//! Stream `i` of master seed `m` is a ChaCha20 generator keyed by
//! `SHA-256("hdns-stream" || m || i)`. Streams are independent of the order
//! in which they are created, so ensembles give identical results for any
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Serializable position of a [`StreamRng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha20Rng,
}

/// Derives the 32-byte key of stream `index` under `master`.
pub fn stream_key(master: u64, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"hdns-stream");
    hasher.update(master.to_le_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

impl StreamRng {
    pub fn new(master: u64, index: u64) -> Self {
        Self {
            inner: ChaCha20Rng::from_seed(stream_key(master, index)),
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut inner = ChaCha20Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self { inner }
    }

    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}
