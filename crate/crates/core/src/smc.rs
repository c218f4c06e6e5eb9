//! Feynman-Kac steered sequential Monte Carlo over the reverse diffusion.
//!
//! A run draws `K` forward samples of the corrupted input at step `N`, then
//! walks the reverse chain with a propose / weight / resample cycle:
//!
//! - potentials start at `lambda * r(x_hat_N)` and accumulate the difference
//!   potential `lambda * (r(x_hat_{t-1}) - r(x_hat_t))` plus the proposal
//!   correction `log p(x_{t-1} | x_t) - log tau(x_{t-1} | x_t)`, so with the
//!   unbiased kernel the product of potentials telescopes to `lambda * r(x_hat_0)`;
//! - every `resample_check_period` steps the ESS of the normalized potentials
//!   is compared against `ess_fraction * K` and multinomial resampling resets
//!   the potentials to uniform;
//! - the output is the Tweedie estimate of the particle with the highest final
//!   reward.
//!
//! Randomness is drawn from substreams keyed by (seed, consumer, particle,
//! step), so results do not depend on the execution mode.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::{argmax, GaussianMixtureWorld, LowPassFilter};
use crate::par::{map_indexed, ExecMode};
use crate::reward::{RewardFn, RewardGradient};
use crate::rng::{standard_normal_vec, substream, tag};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: Vec<f64>,
    pub predicted_clean: Vec<f64>,
    pub log_potential: f64,
    pub reward_at_state: f64,
    /// Noise prediction at `state`, reused by the next proposal.
    eps: Vec<f64>,
}

impl Particle {
    fn at(world: &GaussianMixtureWorld, schedule: &NoiseSchedule, state: Vec<f64>, t: usize) -> Result<Self> {
        let eps = world.exact_noisy_eps(&state, t, schedule)?;
        let predicted_clean = schedule.tweedie_denoise(&state, t, &eps)?;
        Ok(Self {
            state,
            predicted_clean,
            log_potential: 0.0,
            reward_at_state: 0.0,
            eps,
        })
    }
}

/// One diagnostics row per reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Step the ensemble was at when the record was opened.
    pub step: usize,
    /// ESS of the normalized potentials before any resampling at this step.
    pub ess: f64,
    pub resampled: bool,
    /// Reward statistics of the proposed particles at `step - 1`.
    pub max_reward: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub t: usize,
    pub seed: u64,
    pub history: Vec<StepRecord>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn log_potentials(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_potential).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    UnbiasedReverse,
    #[default]
    LowpassGuided,
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalKind::UnbiasedReverse => "unbiased_reverse",
            ProposalKind::LowpassGuided => "lowpass_guided",
        })
    }
}

impl FromStr for ProposalKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "unbiased_reverse" => Ok(ProposalKind::UnbiasedReverse),
            "lowpass_guided" => Ok(ProposalKind::LowpassGuided),
            other => Err(format!("unknown proposal kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteeringConfig {
    pub particles: usize,
    pub steps: usize,
    pub lambda: f64,
    pub resample_check_period: usize,
    pub ess_fraction: f64,
    pub guidance_weight: f64,
    pub filter: LowPassFilter,
    pub proposal: ProposalKind,
    /// Execution mode for the per-particle loop.
    pub exec: ExecMode,
}

/// Guidance weight whose displacement `w / sqrt(ab_{t-1})`, averaged over the
/// noisy steps `t = 2..=N`, equals half the average reverse standard deviation.
pub fn calibrate_guidance_weight(schedule: &NoiseSchedule, steps: usize) -> f64 {
    let steps = steps.min(schedule.steps());
    if steps < 2 {
        return 0.0;
    }
    let n = (steps - 1) as f64;
    let mean_std: f64 = (2..=steps).map(|t| schedule.posterior_variance(t).sqrt()).sum::<f64>() / n;
    let mean_gain: f64 = (2..=steps).map(|t| 1.0 / schedule.alpha_bar(t - 1).sqrt()).sum::<f64>() / n;
    0.5 * mean_std / mean_gain
}

impl SteeringConfig {
    /// Defaults: K = 4, N = 50 (capped at T), lambda = 1, ESS check every 5
    /// steps against K / 2, low-pass guidance with cutoff `dim / 4`.
    pub fn defaults(dim: usize, schedule: &NoiseSchedule) -> Result<Self> {
        let steps = 50.min(schedule.steps());
        Ok(Self {
            particles: 4,
            steps,
            lambda: 1.0,
            resample_check_period: 5,
            ess_fraction: 0.5,
            guidance_weight: calibrate_guidance_weight(schedule, steps),
            filter: LowPassFilter::new((dim / 4).max(1), dim)?,
            proposal: ProposalKind::LowpassGuided,
            exec: ExecMode::Sequential,
        })
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        let fail = |m: String| Err(Error::Steering(m));
        if self.particles == 0 {
            return fail("K must be at least 1".into());
        }
        if self.steps == 0 || self.steps > schedule.steps() {
            return fail(format!("N = {} must lie in 1..={}", self.steps, schedule.steps()));
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            return fail(format!("ess_fraction = {} must lie in (0, 1]", self.ess_fraction));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda = {} must be finite and >= 0", self.lambda));
        }
        if !(self.guidance_weight >= 0.0 && self.guidance_weight.is_finite()) {
            return fail(format!("guidance_weight = {} must be finite and >= 0", self.guidance_weight));
        }
        if self.resample_check_period == 0 {
            return fail("resample_check_period must be at least 1".into());
        }
        Ok(())
    }

    fn guided(&self) -> bool {
        self.proposal == ProposalKind::LowpassGuided && self.guidance_weight > 0.0
    }
}

/// `1 / sum p_i^2` of a normalized weight vector.
pub fn ess(normalized: &[f64]) -> Result<f64> {
    if normalized.is_empty() {
        return Err(Error::EmptyProbabilities);
    }
    let sum: f64 = normalized.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || normalized.iter().any(|p| *p < 0.0) {
        return Err(Error::NotNormalized { sum });
    }
    Ok(1.0 / normalized.iter().map(|p| p * p).sum::<f64>())
}

/// Softmax of log-potentials with max subtraction.
pub fn normalize_log_potentials(log_potentials: &[f64]) -> Result<Vec<f64>> {
    if log_potentials.is_empty() {
        return Err(Error::EmptyProbabilities);
    }
    if let Some(index) = log_potentials.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let max = log_potentials.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_potentials.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Draws `count` i.i.d. ancestor indices from a normalized weight vector.
pub fn sample_ancestors<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.len() - 1;
    (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cdf.partition_point(|c| *c <= u).min(last)
        })
        .collect()
}

/// Multinomial resampling; offspring inherit state and cached reward, and all
/// log-potentials are reset to zero.
pub fn multinomial_resample(ensemble: &Ensemble) -> Result<Ensemble> {
    let weights = normalize_log_potentials(&ensemble.log_potentials())?;
    let mut rng = substream(ensemble.seed, &[tag::RESAMPLE, ensemble.t as u64]);
    let ancestors = sample_ancestors(&weights, ensemble.len(), &mut rng);
    let particles = ancestors
        .into_iter()
        .map(|a| Particle {
            log_potential: 0.0,
            ..ensemble.particles[a].clone()
        })
        .collect();
    Ok(Ensemble {
        particles,
        t: ensemble.t,
        seed: ensemble.seed,
        history: ensemble.history.clone(),
    })
}

/// Gradient of `|| phi(y) - phi(x_hat(x)) ||_2` with respect to `x`, where
/// `x_hat = (x - sqrt(1 - ab) eps) / sqrt(ab)` with `eps` held fixed.
pub fn lowpass_guidance_gradient(filter: &LowPassFilter, target: &[f64], x_hat: &[f64], alpha_bar: f64) -> Vec<f64> {
    let diff: Vec<f64> = target.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let residual = filter.apply(&diff);
    let norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; x_hat.len()];
    }
    let scale = -1.0 / (alpha_bar.sqrt() * norm);
    residual.into_iter().map(|r| scale * r).collect()
}

/// Kernel parameters recorded by a proposal, enough to evaluate `p / tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    pub base_mean: Vec<f64>,
    pub base_var: f64,
    pub prop_mean: Vec<f64>,
    pub prop_var: f64,
}

impl ProposalRecord {
    /// `log p(x | x_t) - log tau(x | x_t)`; zero for the noiseless final step
    /// and for an unshifted proposal.
    pub fn log_ratio(&self, proposed: &[f64]) -> Result<f64> {
        if self.base_var == 0.0 || self.base_mean == self.prop_mean && self.base_var == self.prop_var {
            return Ok(0.0);
        }
        correction_log_ratio(proposed, &self.base_mean, self.base_var, &self.prop_mean, self.prop_var)
    }
}

fn isotropic_log_normal(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    -0.5 * (sq / var + x.len() as f64 * (var.ln() + LN_2PI))
}

pub fn correction_log_ratio(
    proposed: &[f64],
    base_mean: &[f64],
    base_var: f64,
    prop_mean: &[f64],
    prop_var: f64,
) -> Result<f64> {
    for v in [base_var, prop_var] {
        if !(v > 0.0) {
            return Err(Error::NonPositiveVariance(v));
        }
    }
    Ok(isotropic_log_normal(proposed, base_mean, base_var) - isotropic_log_normal(proposed, prop_mean, prop_var))
}

/// `lambda * (reward_new - reward_old)`.
pub fn difference_log_potential(reward_new: f64, reward_old: f64, lambda: f64) -> f64 {
    lambda * (reward_new - reward_old)
}

/// Shared inputs of one proposal.
struct StepContext<'a> {
    world: &'a GaussianMixtureWorld,
    schedule: &'a NoiseSchedule,
    config: &'a SteeringConfig,
    target: &'a [f64],
    seed: u64,
}

impl StepContext<'_> {
    /// Moves one particle from `t` to `t - 1`. `mean_shift` displaces the
    /// reverse mean before sampling (gradient-guided trajectories).
    fn propose(
        &self,
        particle: &Particle,
        index: usize,
        t: usize,
        mean_shift: Option<&[f64]>,
    ) -> Result<(Particle, ProposalRecord)> {
        let kernel = self
            .schedule
            .reverse_kernel_params(&particle.state, t, &particle.eps)?;
        let mut rng = substream(self.seed, &[tag::PROPOSE, index as u64, t as u64]);
        let z = standard_normal_vec(&mut rng, particle.state.len());
        let mut prop_mean = kernel.mean.clone();
        if let Some(shift) = mean_shift {
            prop_mean.iter_mut().zip(shift).for_each(|(m, s)| *m += s);
        }
        let sd = kernel.variance.sqrt();
        let mut state: Vec<f64> = prop_mean.iter().zip(&z).map(|(m, z)| m + sd * z).collect();

        let prev = t - 1;
        if self.config.guided() {
            let eps = self.world.exact_noisy_eps(&state, prev, self.schedule)?;
            let x_hat = self.schedule.tweedie_denoise(&state, prev, &eps)?;
            let grad = lowpass_guidance_gradient(
                &self.config.filter,
                self.target,
                &x_hat,
                self.schedule.alpha_bar(prev),
            );
            let w = self.config.guidance_weight;
            for ((x, m), g) in state.iter_mut().zip(prop_mean.iter_mut()).zip(&grad) {
                *x -= w * g;
                *m -= w * g;
            }
        }

        let next = Particle {
            log_potential: particle.log_potential,
            reward_at_state: particle.reward_at_state,
            ..Particle::at(self.world, self.schedule, state, prev)?
        };
        let record = ProposalRecord {
            base_mean: kernel.mean,
            base_var: kernel.variance,
            prop_mean,
            prop_var: kernel.variance,
        };
        Ok((next, record))
    }
}

/// One proposal for every particle, `t -> t - 1`. Potentials are left untouched;
/// the returned records make the correction ratio computable.
pub fn propose_step(
    ensemble: &Ensemble,
    x0_corrupted: &[f64],
    config: &SteeringConfig,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
) -> Result<(Ensemble, Vec<ProposalRecord>)> {
    if ensemble.t == 0 {
        return Err(Error::Steering("no reverse step remains at t = 0".into()));
    }
    let ctx = StepContext {
        world,
        schedule,
        config,
        target: x0_corrupted,
        seed: ensemble.seed,
    };
    let t = ensemble.t;
    let results = map_indexed(config.exec, ensemble.len(), |i| {
        ctx.propose(&ensemble.particles[i], i, t, None)
    });
    let mut particles = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        let (p, rec) = r?;
        particles.push(p);
        records.push(rec);
    }
    Ok((
        Ensemble {
            particles,
            t: t - 1,
            seed: ensemble.seed,
            history: ensemble.history.clone(),
        },
        records,
    ))
}

/// Draws the `K` forward samples at step `N` and scores them.
pub fn initialize(
    x0_corrupted: &[f64],
    config: &SteeringConfig,
    reward: &dyn RewardFn,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Ensemble> {
    config.validate(schedule)?;
    world.check_dim(x0_corrupted)?;
    let n = config.steps;
    let particles = map_indexed(config.exec, config.particles, |i| {
        let mut rng = substream(seed, &[tag::FORWARD, i as u64]);
        let x_n = schedule.forward_marginal_sample(x0_corrupted, n, &mut rng)?;
        let mut p = Particle::at(world, schedule, x_n, n)?;
        p.reward_at_state = reward.reward(&p.predicted_clean, n);
        p.log_potential = config.lambda * p.reward_at_state;
        Ok(p)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        particles,
        t: n,
        seed,
        history: Vec::with_capacity(n),
    })
}

#[derive(Debug, Clone)]
pub struct SteerOutcome {
    pub adapted: Vec<f64>,
    /// Index of the particle with the highest final reward.
    pub chosen: usize,
    pub ensemble: Ensemble,
}

impl SteerOutcome {
    pub fn history(&self) -> &[StepRecord] {
        &self.ensemble.history
    }

    /// Index drawn proportionally to the final potentials.
    pub fn select_by_weight<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        let w = normalize_log_potentials(&self.ensemble.log_potentials())?;
        Ok(sample_ancestors(&w, 1, rng)[0])
    }

    /// Weight-proportional draw from the run's own selection stream.
    pub fn weighted_sample(&self) -> Result<&[f64]> {
        let mut rng = substream(self.ensemble.seed, &[tag::SELECT]);
        let i = self.select_by_weight(&mut rng)?;
        Ok(&self.ensemble.particles[i].predicted_clean)
    }
}

pub type PotentialFn = fn(f64, f64, f64) -> f64;

/// Runs the full steering loop from `N` to `0`.
pub fn steer(
    x0_corrupted: &[f64],
    config: &SteeringConfig,
    reward: &dyn RewardFn,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<SteerOutcome> {
    steer_with_potential(x0_corrupted, config, reward, world, schedule, seed, difference_log_potential)
}

/// [`steer`] with a replaceable potential increment; used by mutation checks.
#[doc(hidden)]
pub fn steer_with_potential(
    x0_corrupted: &[f64],
    config: &SteeringConfig,
    reward: &dyn RewardFn,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
    seed: u64,
    potential: PotentialFn,
) -> Result<SteerOutcome> {
    let mut ensemble = initialize(x0_corrupted, config, reward, world, schedule, seed)?;
    let n = config.steps;
    let threshold = config.ess_fraction * config.particles as f64;
    while ensemble.t > 0 {
        let t = ensemble.t;
        let current_ess = ess(&normalize_log_potentials(&ensemble.log_potentials())?)?;
        let mut resampled = false;
        if (n - t).is_multiple_of(config.resample_check_period) && current_ess < threshold {
            ensemble = multinomial_resample(&ensemble)?;
            resampled = true;
        }
        let (mut next, records) = propose_step(&ensemble, x0_corrupted, config, world, schedule)?;
        let updates = map_indexed(config.exec, next.len(), |i| {
            let p = &next.particles[i];
            let r_new = reward.reward(&p.predicted_clean, t - 1);
            let ratio = records[i].log_ratio(&p.state)?;
            Ok::<_, Error>((r_new, ratio + potential(r_new, p.reward_at_state, config.lambda)))
        });
        let mut max_reward = f64::NEG_INFINITY;
        let mut sum_reward = 0.0;
        for (p, u) in next.particles.iter_mut().zip(updates) {
            let (r_new, increment) = u?;
            p.log_potential += increment;
            p.reward_at_state = r_new;
            max_reward = max_reward.max(r_new);
            sum_reward += r_new;
        }
        next.history.push(StepRecord {
            step: t,
            ess: current_ess,
            resampled,
            max_reward,
            mean_reward: sum_reward / next.len() as f64,
        });
        ensemble = next;
    }
    let rewards: Vec<f64> = ensemble.particles.iter().map(|p| p.reward_at_state).collect();
    let chosen = argmax(&rewards);
    Ok(SteerOutcome {
        adapted: ensemble.particles[chosen].predicted_clean.clone(),
        chosen,
        ensemble,
    })
}

/// Single reverse trajectory from `N` sharing the streams of particle 0 of
/// [`steer`]. With `reward_guidance = Some((s, r))` every reverse mean is
/// shifted by `s * grad_x r(x_hat_t)`, the gradient taken through the Tweedie
/// map with the noise prediction held fixed. The config's proposal kind still
/// applies, so this is the unbiased chain or its low-pass guided variant.
pub fn single_trajectory(
    x0_corrupted: &[f64],
    config: &SteeringConfig,
    reward_guidance: Option<(f64, &dyn RewardGradient)>,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate(schedule)?;
    world.check_dim(x0_corrupted)?;
    let n = config.steps;
    let mut rng = substream(seed, &[tag::FORWARD, 0]);
    let x_n = schedule.forward_marginal_sample(x0_corrupted, n, &mut rng)?;
    let mut particle = Particle::at(world, schedule, x_n, n)?;
    let ctx = StepContext {
        world,
        schedule,
        config,
        target: x0_corrupted,
        seed,
    };
    for t in (1..=n).rev() {
        let shift = match reward_guidance {
            Some((scale, reward)) if scale != 0.0 => {
                let gain = scale / schedule.alpha_bar(t).sqrt();
                Some(
                    reward
                        .gradient(&particle.predicted_clean, t)
                        .into_iter()
                        .map(|g| gain * g)
                        .collect::<Vec<f64>>(),
                )
            }
            _ => None,
        };
        particle = ctx.propose(&particle, 0, t, shift.as_deref())?.0;
    }
    Ok(particle.predicted_clean)
}
