//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`Stream`]: a ChaCha8 generator
//! seeded with the run seed and switched onto a stream id derived from a
//! textual label (FNV-1a of the label bytes). Two labels under the same seed are
//! independent streams; the same (seed, label) pair always replays the same
//! sequence. Gaussian variates use the Box-Muller transform.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Stream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(label));
        Self { rng, spare: None }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal variate.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// Circularly symmetric complex Gaussian with E|z|^2 = 2 sigma^2
    /// (independent N(0, sigma^2) real and imaginary parts).
    pub fn complex_normal(&mut self, sigma: f64) -> Complex64 {
        Complex64::new(sigma * self.normal(), sigma * self.normal())
    }
}
