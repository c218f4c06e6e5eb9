//! Forward diffusion, the DDPM reverse kernel and Tweedie denoising.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::standard_normal_vec;
use crate::{Error, Result};

/// Per-step variances `beta_t` (t = 1..=T) and cumulative signal coefficients
/// `alpha_bar_t = prod_{s<=t} (1 - beta_s)` with `alpha_bar_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    signal_coeffs: Vec<f64>,
}

/// Mean and isotropic variance of one reverse transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseKernel {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule("at least one step is required".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Schedule(format!("beta {b} outside (0, 1)")));
        }
        let mut signal_coeffs = Vec::with_capacity(betas.len() + 1);
        signal_coeffs.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            signal_coeffs.push(acc);
        }
        Ok(Self {
            betas,
            signal_coeffs,
        })
    }

    /// Betas interpolated linearly from `beta_min` at t = 1 to `beta_max` at t = T.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("T must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// The standard 1000-step linear bounds `(1e-4, 0.02)` rescaled by `1000 / T`.
    pub fn default_bounds(steps: usize) -> (f64, f64) {
        let scale = 1000.0 / steps.max(1) as f64;
        (1e-4 * scale, 0.02 * scale)
    }

    pub fn rescaled_linear(steps: usize) -> Result<Self> {
        let (lo, hi) = Self::default_bounds(steps);
        Self::linear(steps, lo, hi)
    }

    /// Number of diffusion steps T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn signal_coeffs(&self) -> &[f64] {
        &self.signal_coeffs
    }

    fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t` for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.signal_coeffs[t]
    }

    /// Posterior variance `beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)`; zero at t = 1.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t <= 1 {
            return 0.0;
        }
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Draws `x_t ~ q(x_t | x_0)`. At t = 0 the input is returned unchanged.
    pub fn forward_marginal_sample<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        t: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        Ok(self.forward_marginal_with_noise(x0, t, rng)?.0)
    }

    /// Like [`forward_marginal_sample`](Self::forward_marginal_sample) but also
    /// returns the realized standard-normal noise.
    pub fn forward_marginal_with_noise<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        t: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_step(t, 0)?;
        if t == 0 {
            return Ok((x0.to_vec(), vec![0.0; x0.len()]));
        }
        let ab = self.alpha_bar(t);
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        let eps = standard_normal_vec(rng, x0.len());
        let xt = x0
            .iter()
            .zip(&eps)
            .map(|(x, e)| signal * x + noise * e)
            .collect();
        Ok((xt, eps))
    }

    /// Draws `x_t ~ q(x_t | x_{t-1})`, one forward transition.
    pub fn forward_step_sample<R: Rng + ?Sized>(
        &self,
        x_prev: &[f64],
        t: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_step(t, 1)?;
        let b = self.beta(t);
        let (signal, noise) = ((1.0 - b).sqrt(), b.sqrt());
        Ok(x_prev
            .iter()
            .map(|x| signal * x + noise * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect())
    }

    /// DDPM posterior parameterization of `p(x_{t-1} | x_t)` given predicted noise.
    pub fn reverse_kernel_params(&self, x_t: &[f64], t: usize, eps: &[f64]) -> Result<ReverseKernel> {
        self.check_step(t, 1)?;
        check_dims(x_t, eps)?;
        let b = self.beta(t);
        let scale = 1.0 / (1.0 - b).sqrt();
        let coef = b / (1.0 - self.alpha_bar(t)).sqrt();
        let mean = x_t
            .iter()
            .zip(eps)
            .map(|(x, e)| scale * (x - coef * e))
            .collect();
        Ok(ReverseKernel {
            mean,
            variance: self.posterior_variance(t),
        })
    }

    /// Tweedie estimate of the clean point, `(x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)`.
    /// At t = 0 this is the identity.
    pub fn tweedie_denoise(&self, x_t: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t, 0)?;
        check_dims(x_t, eps)?;
        if t == 0 {
            return Ok(x_t.to_vec());
        }
        let ab = self.alpha_bar(t);
        let (noise, inv_signal) = ((1.0 - ab).sqrt(), 1.0 / ab.sqrt());
        Ok(x_t
            .iter()
            .zip(eps)
            .map(|(x, e)| (x - noise * e) * inv_signal)
            .collect())
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Number of forward/reverse steps N used for adaptation, `1 <= N <= T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionRange(usize);

impl DiffusionRange {
    pub fn new(steps: usize, schedule: &NoiseSchedule) -> Result<Self> {
        if steps == 0 || steps > schedule.steps() {
            return Err(Error::Schedule(format!(
                "diffusion range N = {steps} must lie in 1..={}",
                schedule.steps()
            )));
        }
        Ok(Self(steps))
    }

    pub fn get(self) -> usize {
        self.0
    }
}
