//! Deterministic pseudo-random numbers.
//!
//! Every random quantity in this crate (datasets, weight initialization,
//! epoch shuffles, power-iteration start vectors) comes from the generator
//! below so that results are bit-reproducible from a 64-bit seed, across
//! runs and across independent implementations of the same stream:
//!
//! - seeding: SplitMix64 expands the seed into the 256-bit state;
//! - stream: xoshiro256++;
//! - uniform doubles: the top 53 bits of an output times 2⁻⁵³, in [0, 1);
//! - gaussians: Box–Muller on two consecutive uniforms, cosine branch
//!   delivered first, sine branch cached for the next call;
//! - bounded integers: `next_u64() % n` (the modulo bias at n ≪ 2⁶⁴ is
//!   irrelevant here and keeps the stream trivially specifiable);
//! - shuffle: Fisher–Yates from the top index down.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256++ generator with a cached Box–Muller tail.
#[derive(Debug, Clone)]
pub struct Xoshiro256 {
    s: [u64; 4],
    cached_gaussian: Option<f64>,
}

impl Xoshiro256 {
    pub fn seed_from(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Xoshiro256 {
            s,
            cached_gaussian: None,
        }
    }

    /// Independent substream `stream` of a base seed. Substreams are
    /// ordinary seeds at `seed + stream·GOLDEN`, which SplitMix64 then
    /// decorrelates.
    pub fn stream(seed: u64, stream: u64) -> Self {
        Self::seed_from(seed.wrapping_add(stream.wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box–Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gaussian.take() {
            return z;
        }
        // 1 - u keeps the argument of ln strictly positive.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below requires n > 0");
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }
}
