//! Seeded, splittable random stream.
//!
//! Backed by ChaCha8, a counter-based generator: the 64-bit seed selects the key and
//! a 64-bit stream id selects an independent sequence under that key. Substreams for
//! parallel workers are derived deterministically from the parent's stream id.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

// SplitMix64 finalizer, used to spread substream indices over the stream space.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent generator for worker `index`. Does not advance `self`.
    pub fn substream(&self, index: u64) -> Self {
        Self::with_stream(self.seed, mix64(self.stream ^ mix64(index.wrapping_add(1))))
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in `[-1/2, 1/2)`.
    #[inline]
    pub fn centered_uniform(&mut self) -> f64 {
        self.uniform() - 0.5
    }

    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.gaussian();
        }
    }

    pub fn fill_centered_uniform(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.centered_uniform();
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen::<u64>()
    }
}
