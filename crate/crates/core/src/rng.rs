//! Deterministic random number generation.
//!
//! All stochastic code in this crate draws from [`Rng64`], a xoshiro256++
//! generator seeded through SplitMix64, with normal deviates produced by the
//! polar Box-Muller method. The algorithms are fixed on purpose: given the
//! same seed, trajectories are bit-identical across runs and across
//! implementations that follow the same conventions.
//!
//! Conventions:
//! - seeding: the four 64-bit state words are the first four outputs of
//!   SplitMix64 initialized with the seed;
//! - uniforms: `(next_u64() >> 11) * 2^-53`, i.e. 53-bit doubles in `[0, 1)`;
//! - normals: polar Box-Muller (rejection on the unit disc); deviates are
//!   consumed in generated order, one pair per accepted disc point;
//! - ensemble member `i` uses `seed.wrapping_add(i)` re-expanded through
//!   SplitMix64, so adjacent member seeds yield decorrelated streams.

/// SplitMix64 step: advances `state` and returns the next output.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seeded xoshiro256++ generator with polar-method normal deviates.
#[derive(Debug, Clone)]
pub struct Rng64 {
    s: [u64; 4],
    /// Second deviate of the last polar pair, returned before drawing again.
    cached_normal: Option<f64>,
}

impl Rng64 {
    /// Create a generator from a 64-bit seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng64 { s, cached_normal: None }
    }

    /// Generator for ensemble member `member` derived from `base_seed`.
    ///
    /// The member index is added to the base seed before SplitMix64
    /// expansion, so members are reproducible individually.
    pub fn for_member(base_seed: u64, member: u64) -> Self {
        Self::from_seed(base_seed.wrapping_add(member))
    }

    /// Next raw 64-bit output (xoshiro256++).
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

    /// Uniform double in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal deviate via the polar Box-Muller method.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.cached_normal = Some(v * m);
                return u * m;
            }
        }
    }

    /// Fill `out` with independent standard normal deviates.
    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.standard_normal();
        }
    }
}
