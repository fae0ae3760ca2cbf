//! Seeded, splittable random streams.
//!
//! A [`Seed`] names a family of independent ChaCha8 streams. Each episode (or
//! generated example) draws from `seed.stream(index)`, so results never depend
//! on the order in which worker threads pick up work. Child seeds are derived
//! with a SplitMix64 finalizer, either from a numeric label or from a name.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// 64-bit root of a family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives an independent child seed from a numeric label.
    pub fn child(self, label: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    /// Derives an independent child seed from a name.
    pub fn named(self, name: &str) -> Seed {
        // FNV-1a, then mixed through `child`.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.child(h)
    }

    /// Opens stream `index` of this family.
    pub fn stream(self, index: u64) -> StreamRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.0);
        inner.set_stream(index);
        StreamRng(inner)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A single counter-based random stream owned by one episode.
#[derive(Debug, Clone)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// `true` with probability `p`; `p <= 0` never fires and `p >= 1` always does.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`. Panics when `n == 0`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    /// Uniform integer in the inclusive range `lo..=hi`.
    #[inline]
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        self.0.random_range(lo..=hi)
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
