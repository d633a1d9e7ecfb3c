//! Counter-based pseudo-random generator.
//!
//! The stream is part of this crate's test contract and is versioned: stream
//! v1 emits `mix64(key + GOLDEN * counter)` where `mix64` is the SplitMix64
//! finalizer and `counter` starts at 0 and increments by one per draw.
//! Identical `(key, counter)` state therefore reproduces identical output on
//! every platform. Changing the stream requires bumping [`Rng::STREAM_VERSION`].

use super::matrix::DenseVector;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic counter-based RNG (stream v1, see module docs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub const STREAM_VERSION: u32 = 1;

    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent substream `stream` of the same seed. Used to decouple
    /// e.g. per-epoch training draws from evaluation draws.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN) ^ mix64(stream.wrapping_mul(GOLDEN) ^ 0x6A09_E667_F3BC_C909));
        Rng { key, counter: 0 }
    }

    /// Raw `(key, counter)` state, e.g. for checkpointing.
    pub fn state(&self) -> (u64, u64) {
        (self.key, self.counter)
    }

    pub fn restore(key: u64, counter: u64) -> Self {
        Rng { key, counter }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key.wrapping_add(GOLDEN.wrapping_mul(self.counter)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw via Box-Muller. Consumes exactly two `u64`s.
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased draw in `[0, n)` (Lemire with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            let low = m as u64;
            if low < n {
                let threshold = n.wrapping_neg() % n;
                if low < threshold {
                    continue;
                }
            }
            return (m >> 64) as u64;
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below((i + 1) as u64) as usize;
            items.swap(i, j);
        }
    }
}

/// `d` i.i.d. standard normal draws.
pub fn sample_standard_normal(rng: &mut Rng, d: usize) -> DenseVector {
    assert!(d >= 1, "sample dimension must be >= 1");
    DenseVector::new((0..d).map(|_| rng.normal()).collect())
}
