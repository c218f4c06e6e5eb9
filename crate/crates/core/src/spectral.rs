//! DFT band operations on real vectors.
//!
//! A bin `j` of a length-`d` DFT carries the frequency `min(j, d - j)`, so a
//! real vector has frequencies `0..=d/2`. All multipliers here are applied per
//! frequency, which keeps conjugate bins paired and the output real.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub struct Spectrum {
    dim: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectrum").field("dim", &self.dim).finish()
    }
}

impl Clone for Spectrum {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            forward: Arc::clone(&self.forward),
            inverse: Arc::clone(&self.inverse),
        }
    }
}

impl Spectrum {
    pub fn new(dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dim,
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest frequency index representable in this dimension.
    pub fn max_frequency(&self) -> usize {
        self.dim / 2
    }

    pub fn frequency_of_bin(&self, bin: usize) -> usize {
        bin.min(self.dim - bin)
    }

    /// Scales every frequency `k` of `x` by `gain(k)` and returns the real result.
    pub fn filter(&self, x: &[f64], gain: impl Fn(usize) -> f64) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        if self.dim == 0 {
            return Vec::new();
        }
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (bin, c) in buf.iter_mut().enumerate() {
            *c *= gain(self.frequency_of_bin(bin));
        }
        self.inverse.process(&mut buf);
        let norm = 1.0 / self.dim as f64;
        buf.iter().map(|c| c.re * norm).collect()
    }

    /// Orthogonal projection onto frequencies in `lo..hi`.
    pub fn band_project(&self, x: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        self.filter(x, |k| if k >= lo && k < hi { 1.0 } else { 0.0 })
    }
}
