//! Deterministic random streams.
//!
//! Every random quantity in the toolkit (patch corners, filter weights,
//! synthesis initializations) is drawn from a ChaCha8 generator keyed by a
//! single 64-bit master seed. Independent consumers obtain their own stream
//! with [`Rng::substream`]; the derived stream depends only on the master
//! seed and the path of sub-stream indices, never on how many values the
//! parent has already produced.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sub-stream used for patch sampling when building learned banks.
pub const STREAM_PATCHES: u64 = 1;
/// Sub-stream used for filter construction (random weights, k-means init).
pub const STREAM_FILTERS: u64 = 2;
/// Sub-stream used for synthesis noise initialization.
pub const STREAM_NOISE: u64 = 3;
/// Sub-stream used for evaluation patch sampling.
pub const STREAM_EVAL: u64 = 4;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for child `index` of this stream.
    pub fn substream(&self, index: u64) -> Rng {
        let child = splitmix64(self.stream ^ splitmix64(index.wrapping_add(1)));
        Self::with_stream(self.seed, child)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.inner.random_range(0..n)
    }

    /// Uniform single-precision draw in the closed interval `[-bound, bound]`.
    pub fn symmetric_f32(&mut self, bound: f32) -> f32 {
        self.inner.random_range(-bound..=bound)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
