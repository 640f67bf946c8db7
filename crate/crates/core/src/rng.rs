//! Deterministic counter-based randomness built on splitmix64.
//!
//! Consumers derive an independent [`Stream`] per (seed, salt, index) key, so
//! every draw is a pure function of position and the results do not depend on
//! evaluation order or thread count. The integer pipeline is exactly portable;
//! the float shaping (`normal`) is deterministic for a given build of the
//! standard math library.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the splitmix64 generator.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapses (seed, a, b) into a well-mixed stream key. The multipliers are
/// arbitrary odd 64-bit constants; the final splitmix step removes any linear
/// structure between neighbouring (a, b) pairs.
#[inline]
pub fn mix_key(seed: u64, a: u64, b: u64) -> u64 {
    let mut s = seed
        ^ a.wrapping_mul(0xA076_1D64_78BD_642F)
        ^ b.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    splitmix64(&mut s)
}

/// A sequential splitmix64 stream.
#[derive(Clone, Debug)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { state: seed }
    }

    /// Stream for position (a, b) under `seed`; independent of every other key.
    pub fn keyed(seed: u64, a: u64, b: u64) -> Self {
        Stream {
            state: mix_key(seed, a, b),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// Uniform index in [0, n). Uses the 128-bit multiply reduction; the
    /// modulo bias is below 2^-64 and irrelevant at these sizes.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal deviate via Box-Muller. Consumes two uniforms.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit_f64(); // (0, 1], keeps ln finite
        let u2 = self.unit_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// In-place Fisher-Yates shuffle driven by `stream`.
pub fn shuffle<T>(xs: &mut [T], stream: &mut Stream) {
    for i in (1..xs.len()).rev() {
        let j = stream.below(i + 1);
        xs.swap(i, j);
    }
}
