//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 stream keyed by a
//! user seed and a stream index, so results are reproducible bit-for-bit
//! across platforms and independent of how work is split across threads.
//! Gaussian variates use Box–Muller and Laplace variates use the inverse CDF,
//! both on 53-bit uniforms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A deterministic random stream.
#[derive(Clone, Debug)]
pub struct Stream {
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, &[])
    }

    /// Stream identified by `seed` and a path of indices, e.g. `(seed, [trial, row, projection])`.
    pub fn substream(seed: u64, path: &[u64]) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        let mut id = 0x5EED_u64;
        for &p in path {
            id = splitmix(id ^ splitmix(p.wrapping_add(1)));
        }
        inner.set_stream(id);
        Stream {
            inner,
            spare_normal: None,
        }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1].
    pub fn uniform_open(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * t.sin());
        r * t.cos()
    }

    /// Laplace(0, scale) by inverting the CDF.
    pub fn laplace(&mut self, scale: f64) -> f64 {
        let u = self.uniform() - 0.5;
        -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
    }

    /// Uniform direction on the unit sphere in `dim` dimensions.
    ///
    /// Zero-norm Gaussian draws (a null event) are redrawn.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// Draw an index from a probability vector.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}
