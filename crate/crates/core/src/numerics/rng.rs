//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha20 (counter-based, keyed by
//! the 64-bit seed). Independent consumers get independent 64-bit stream ids
//! under the same key via [`RngStream::derive`], so adding a consumer never
//! shifts another consumer's sequence.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Stream identifiers used across the crate.
pub mod streams {
    pub const INIT_EXTRACTOR: u64 = 0x10;
    pub const INIT_REALFAKE: u64 = 0x11;
    pub const INIT_BIAS: u64 = 0x12;
    pub const INIT_CONTENT: u64 = 0x13;
    pub const BATCHES: u64 = 0x20;
    pub const SPLIT: u64 = 0x30;
    pub const SUBSAMPLE: u64 = 0x31;
    pub const SYNTH: u64 = 0x40;
    pub const PROBE: u64 = 0x50;
    pub const GRADCHECK: u64 = 0x60;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha20Rng,
}

/// Serializable position of an [`RngStream`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position inside the stream, as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// A fresh stream with the same key and stream id `stream`.
    pub fn derive(&self, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Self {
            seed: self.seed,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Option<Self> {
        let word_pos: u128 = state.word_pos.parse().ok()?;
        let mut rng = ChaCha20Rng::seed_from_u64(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(word_pos);
        Some(Self {
            seed: state.seed,
            rng,
        })
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
