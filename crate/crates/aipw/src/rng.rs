//! Splittable, counter-based pseudo-random generator.
//!
//! Every stochastic component in the crate (fold assignment, synthetic data,
//! bootstrap resampling, Monte Carlo replications) draws from this generator,
//! so a single `u64` seed pins down an entire experiment bit-for-bit. The
//! generator advances a counter by a fixed odd increment and scrambles it
//! with a 64-bit finalizer; independent streams are obtained either by
//! splitting an existing stream or by deriving a stream directly from a
//! `(seed, index)` pair, which is what lets replications run in parallel
//! without any shared mutable state.

/// Additive constant for the default stream: 2^64 / golden ratio, forced odd.
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// 64-bit mix finalizer: xor-shift/multiply avalanche with full diffusion.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Derives a usable stream increment: mixes, forces the value odd, and
/// ensures enough bit transitions that the additive constant is not sparse.
fn mix_gamma(z: u64) -> u64 {
    let mut g = z;
    g ^= g >> 33;
    g = g.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    g ^= g >> 33;
    g = g.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    g ^= g >> 33;
    g |= 1;
    if (g ^ (g >> 1)).count_ones() < 24 {
        g ^= 0xAAAA_AAAA_AAAA_AAAA;
    }
    g
}

/// Deterministic splittable random stream.
#[derive(Clone, Debug)]
pub struct SplitRng {
    state: u64,
    gamma: u64,
}

impl SplitRng {
    /// Stream seeded from a single value, using the default increment.
    pub fn new(seed: u64) -> Self {
        SplitRng { state: mix64(seed), gamma: GOLDEN_GAMMA }
    }

    /// Stream derived from a master seed and an index. Distinct indices give
    /// decorrelated streams; this is how per-replication and per-replicate
    /// generators are produced without touching a shared generator.
    pub fn derive(seed: u64, index: u64) -> Self {
        let s = mix64(seed ^ mix64(index.wrapping_add(GOLDEN_GAMMA)));
        SplitRng { state: s, gamma: mix_gamma(s.wrapping_add(GOLDEN_GAMMA)) }
    }

    /// Splits off a child stream, advancing this one by two draws. The child
    /// gets a fresh state and its own increment.
    pub fn split(&mut self) -> SplitRng {
        let s = self.next_u64();
        let g = self.next_u64();
        SplitRng { state: mix64(s), gamma: mix_gamma(g) }
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(self.gamma);
        mix64(self.state)
    }

    /// Uniform draw on `[0, bound)` without modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below: bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// Uniform on `[0, 1)` with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform on the open interval `(0, 1)`: never returns an endpoint, so
    /// values are safe to feed through logs and power transforms.
    pub fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Pair of independent standard normals (Box–Muller transform).
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.open_uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Single standard normal; draws a full pair and keeps the cosine leg.
    pub fn standard_normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    /// Chi-squared draw with `df` degrees of freedom: a sum of `df` squared
    /// independent standard normals.
    pub fn chi_squared(&mut self, df: usize) -> f64 {
        let mut sum = 0.0;
        let mut remaining = df;
        while remaining >= 2 {
            let (a, b) = self.normal_pair();
            sum += a * a + b * b;
            remaining -= 2;
        }
        if remaining == 1 {
            let z = self.standard_normal();
            sum += z * z;
        }
        sum
    }
}
