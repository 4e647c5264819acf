//! Gaussian random fields by spectral synthesis.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Squared-exponential field on an `n x n` grid spanning the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfParams {
    /// Correlation length as a fraction of the domain.
    pub correlation_length: f64,
}

impl Default for GrfParams {
    fn default() -> Self {
        Self {
            correlation_length: 0.1,
        }
    }
}

/// Samples a zero-mean stationary field, returned row-major as `n * n` values.
///
/// White noise is filtered by the square root of the squared-exponential
/// spectral density on a periodic grid twice as wide as the target, then the
/// first `n x n` block is kept so the wrap-around correlation does not show.
pub fn gaussian_random_field<R: Rng>(rng: &mut R, n: usize, params: &GrfParams) -> Vec<f64> {
    let h = if n > 1 { 1.0 / (n - 1) as f64 } else { 1.0 };
    let p = 2 * n.max(1);
    let period = p as f64 * h;
    let ell = params.correlation_length;
    let freq = |k: usize| -> f64 {
        let k = if k <= p / 2 { k as f64 } else { k as f64 - p as f64 };
        2.0 * std::f64::consts::PI * k / period
    };
    let mut buf: Vec<Complex64> = Vec::with_capacity(p * p);
    for a in 0..p {
        for b in 0..p {
            let w2 = freq(a).powi(2) + freq(b).powi(2);
            let amp = (-0.25 * ell * ell * w2).exp();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            buf.push(Complex64::new(amp * re, amp * im));
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(p);
    for row in buf.chunks_mut(p) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); p];
    for c in 0..p {
        for r in 0..p {
            col[r] = buf[r * p + c];
        }
        fft.process(&mut col);
        for r in 0..p {
            buf[r * p + c] = col[r];
        }
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(buf[i * p + j].re);
        }
    }
    out
}
