//! Self-checks run by `fkdiff verify`.
//!
//! The fast level covers algebraic and deterministic invariants; the full
//! level adds the Monte Carlo checks and the tilted-target comparison.

use std::time::Instant;

use crate::harness::{adapt, compare_distributions, rejection_sample_tilted, AdaptationMethod, MethodKind};
use crate::models::{GaussianMixtureWorld, LowPassFilter, WorldLayout};
use crate::par::{map_indexed, ExecMode};
use crate::reward::{anneal_alpha, build_candidate_set, restricted_entropy, CandidateSet, RewardSpec};
use crate::rng::{standard_normal_vec, stream, substream};
use crate::schedule::NoiseSchedule;
use crate::smc::{
    difference_log_potential, ess, multinomial_resample, normalize_log_potentials, sample_ancestors, steer,
    steer_with_potential, Ensemble, PotentialFn, ProposalKind, SteeringConfig,
};
use crate::stats::{ks_one_sample, mean, normal_cdf, standard_error, variance};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level `{other}` (expected fast or full)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn mixture_3() -> Result<GaussianMixtureWorld> {
    GaussianMixtureWorld::isotropic(
        vec![
            vec![1.5, 0.0, -1.0, 0.5],
            vec![-1.0, 1.0, 0.5, 0.0],
            vec![0.0, -1.5, 1.0, -0.5],
        ],
        0.8,
    )
}

/// Unbiased proposals and no resampling: each final log-potential must equal
/// `lambda * r(x_hat_0)`. Returns the worst absolute deviation over `runs` runs.
pub fn telescoping_deviation(potential: PotentialFn, runs: usize) -> Result<f64> {
    let world = GaussianMixtureWorld::from_layout(&WorldLayout::default())?;
    let schedule = NoiseSchedule::rescaled_linear(100)?;
    let mut config = SteeringConfig::defaults(world.dim(), &schedule)?;
    config.proposal = ProposalKind::UnbiasedReverse;
    config.ess_fraction = 1e-9;
    config.lambda = 1.7;
    let spec = RewardSpec::new(70.0, config.steps)?;
    let worst = map_indexed(ExecMode::Parallel, runs, |i| -> Result<f64> {
        let (x0, _) = world.sample(&mut substream(99, &[i as u64]));
        let reward = crate::reward::PseudoLabelReward::for_input(&world, &x0, spec)?;
        let out = steer_with_potential(&x0, &config, &reward, &world, &schedule, i as u64, potential)?;
        Ok(out
            .ensemble
            .particles
            .iter()
            .map(|p| {
                let r0 = crate::reward::RewardFn::reward(&reward, &p.predicted_clean, 0);
                (p.log_potential - config.lambda * r0).abs()
            })
            .fold(0.0, f64::max))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// Outcome of the tilted-Gaussian comparison.
#[derive(Debug, Clone)]
pub struct TiltedReport {
    pub ks_closed_form: f64,
    pub ks_rejection: f64,
    pub steered_mean: f64,
    pub target_mean: f64,
}

/// Standard-normal 1-D world, reward `c x`: weight-proportional draws from
/// `runs` steering runs against `N(lambda c, 1)` and rejection samples.
pub fn tilted_gaussian_check(particles: usize, runs: usize, lambda: f64, slope: f64, seed: u64) -> Result<TiltedReport> {
    let world = GaussianMixtureWorld::standard_normal(1)?;
    let schedule = NoiseSchedule::rescaled_linear(100)?;
    let mut config = SteeringConfig::defaults(1, &schedule)?;
    config.particles = particles;
    config.steps = schedule.steps();
    config.lambda = lambda;
    config.proposal = ProposalKind::UnbiasedReverse;
    let reward = move |x: &[f64], _: usize| slope * x[0];
    let steered = map_indexed(ExecMode::Parallel, runs, |i| -> Result<Vec<f64>> {
        let out = steer(&[0.0], &config, &reward, &world, &schedule, crate::rng::derive_seed(seed, &[i as u64]))?;
        Ok(out.weighted_sample()?.to_vec())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let target_mean = lambda * slope;
    // Capping the reward 8 sd above the tilted mean changes the target by < 1e-14.
    let cap = slope * (target_mean + 8.0);
    let capped = move |x: &[f64], _: usize| (slope * x[0]).min(cap);
    let mut rng = substream(seed, &[0x4f52_4143]);
    let oracle = rejection_sample_tilted(|r| standard_normal_vec(r, 1), &capped, lambda, cap, runs, &mut rng)?;

    let xs: Vec<f64> = steered.iter().map(|x| x[0]).collect();
    let report = compare_distributions(&steered, &oracle, None)?;
    Ok(TiltedReport {
        ks_closed_form: ks_one_sample(&xs, normal_cdf(target_mean, 1.0)),
        ks_rejection: report.ks_coords[0],
        steered_mean: mean(&xs),
        target_mean,
    })
}

fn fast_checks() -> Vec<CheckResult> {
    vec![
        check("schedule consistency", || {
            let s = NoiseSchedule::rescaled_linear(100)?;
            let worst = (1..=s.steps())
                .map(|t| {
                    let ratio = s.alpha_bar(t) / s.alpha_bar(t - 1);
                    ((ratio - (1.0 - s.beta(t))) / ratio).abs()
                })
                .fold(0.0, f64::max);
            Ok((worst < 1e-12, format!("max relative error {worst:.2e}")))
        }),
        check("tweedie and reverse-kernel inversion", || {
            let s = NoiseSchedule::rescaled_linear(100)?;
            let mut rng = stream(1);
            let mut worst: f64 = 0.0;
            for t in [1, 10, 50, 100] {
                let x0: Vec<f64> = (0..6).map(|j| 0.5 + j as f64).collect();
                let (xt, eps) = s.forward_marginal_with_noise(&x0, t, &mut rng)?;
                let back = s.tweedie_denoise(&xt, t, &eps)?;
                for (a, b) in back.iter().zip(&x0) {
                    worst = worst.max(((a - b) / b).abs());
                }
                let prev: Vec<f64> = (0..6).map(|j| 1.0 + 0.3 * j as f64).collect();
                let z = standard_normal_vec(&mut rng, 6);
                let b = s.beta(t);
                let ab = s.alpha_bar(t);
                let xt: Vec<f64> = prev.iter().zip(&z).map(|(p, z)| (1.0 - b).sqrt() * p + b.sqrt() * z).collect();
                let eps: Vec<f64> = z.iter().map(|z| z * (1.0 - ab).sqrt() / b.sqrt()).collect();
                let k = s.reverse_kernel_params(&xt, t, &eps)?;
                for (m, p) in k.mean.iter().zip(&prev) {
                    worst = worst.max(((m - p) / p).abs());
                }
            }
            Ok((worst < 1e-10, format!("max relative error {worst:.2e}")))
        }),
        check("noise prediction vs finite differences", || {
            let world = mixture_3()?;
            let s = NoiseSchedule::rescaled_linear(100)?;
            let mut rng = stream(2);
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for i in 0..20 {
                let t = 1 + (i * 5) % 100;
                let x = standard_normal_vec(&mut rng, 4);
                let eps = world.exact_noisy_eps(&x, t, &s)?;
                let k = (1.0 - s.alpha_bar(t)).sqrt();
                for j in 0..4 {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (world.noisy_log_density(&xp, t, &s) - world.noisy_log_density(&xm, t, &s)) / (2.0 * h);
                    worst = worst.max((eps[j] + k * fd).abs());
                }
            }
            Ok((worst < 1e-5, format!("max abs error {worst:.2e}")))
        }),
        check("low-pass idempotence and linearity", || {
            let f = LowPassFilter::new(3, 12)?;
            let mut rng = stream(3);
            let x = standard_normal_vec(&mut rng, 12);
            let y = standard_normal_vec(&mut rng, 12);
            let once = f.apply(&x);
            let twice = f.apply(&once);
            let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
            let lin: Vec<f64> = once.iter().zip(f.apply(&y)).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
            let e1 = once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let e2 = f.apply(&combo).iter().zip(&lin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok((e1 < 1e-10 && e2 < 1e-10, format!("idempotence {e1:.1e}, linearity {e2:.1e}")))
        }),
        check("ESS endpoints and normalization", || {
            let u = ess(&[0.25; 4])?;
            let d = ess(&[1.0, 0.0, 0.0, 0.0])?;
            let a = normalize_log_potentials(&[0.2, -1.0, 3.0])?;
            let b = normalize_log_potentials(&[10.2, 9.0, 13.0])?;
            let shift = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            Ok((u == 4.0 && d == 1.0 && shift < 1e-12, format!("uniform {u}, degenerate {d}")))
        }),
        check("reward unit values", || {
            let c1 = build_candidate_set(&[0.5, 0.3, 0.1, 0.1], 70.0)?;
            let c2 = build_candidate_set(&[0.1; 10], 70.0)?;
            let two = build_candidate_set(&[0.5, 0.3, 0.2], 70.0)?;
            let h = restricted_entropy(&[0.5, 0.3, 0.2], &two);
            let h4 = restricted_entropy(&[0.25; 4], &CandidateSet::all(4));
            let ok = c1.labels() == [0, 1]
                && c2.len() == 7
                && anneal_alpha(50, 50)? == 0.0
                && anneal_alpha(0, 50)? == 1.0
                && (h - 0.707_765_431_577_753_5).abs() < 1e-12
                && (h4 - 4f64.ln()).abs() < 1e-15;
            Ok((ok, format!("H(0.5,0.3 | C) = {h:.6}")))
        }),
        check("telescoping identity", || {
            let dev = telescoping_deviation(difference_log_potential, 10)?;
            Ok((dev < 1e-12, format!("max |log G - lambda r(x0)| = {dev:.2e}")))
        }),
        check("degenerate methods coincide", || {
            let world = GaussianMixtureWorld::from_layout(&WorldLayout::default())?;
            let schedule = NoiseSchedule::rescaled_linear(100)?;
            let mut steering = SteeringConfig::defaults(world.dim(), &schedule)?;
            steering.particles = 1;
            steering.lambda = 0.0;
            steering.proposal = ProposalKind::UnbiasedReverse;
            let base = AdaptationMethod {
                kind: MethodKind::PureDiffusion,
                steering,
                reward: RewardSpec::new(70.0, 50)?,
                grad_scale: 0.0,
            };
            let mut same = true;
            for i in 0..5u64 {
                let (x0, y) = world.sample(&mut substream(7, &[i]));
                let run = |kind| {
                    adapt(&x0, &AdaptationMethod { kind, ..base.clone() }, Some(y), &world, &schedule, i)
                        .map(|a| a.x)
                };
                let pure = run(MethodKind::PureDiffusion)?;
                same &= pure == run(MethodKind::Steering)? && pure == run(MethodKind::GradGuided)?;
            }
            Ok((same, "steering(lambda=0, K=1), grad_guided(s=0), pure_diffusion".into()))
        }),
        check("steering determinism", || {
            let world = mixture_3()?;
            let schedule = NoiseSchedule::rescaled_linear(60)?;
            let config = SteeringConfig::defaults(4, &schedule)?;
            let reward = |x: &[f64], _: usize| -x[0].abs();
            let a = steer(&[0.3, 0.2, 0.1, 0.0], &config, &reward, &world, &schedule, 42)?;
            let b = steer(&[0.3, 0.2, 0.1, 0.0], &config, &reward, &world, &schedule, 42)?;
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            Ok((bits(&a.adapted) == bits(&b.adapted), "identical seeds give identical output".into()))
        }),
    ]
}

fn full_checks() -> Vec<CheckResult> {
    vec![
        check("forward marginal moments", || {
            let s = NoiseSchedule::rescaled_linear(100)?;
            let t = 30;
            let mut rng = stream(10);
            let xs: Vec<f64> = (0..100_000)
                .map(|_| s.forward_marginal_sample(&[0.0], t, &mut rng).map(|v| v[0]))
                .collect::<Result<_>>()?;
            let m = mean(&xs);
            let v = variance(&xs);
            let target = 1.0 - s.alpha_bar(t);
            let se_m = standard_error(&xs);
            let se_v = target * (2.0 / xs.len() as f64).sqrt();
            let ok = m.abs() < 3.0 * se_m && (v - target).abs() < 3.0 * se_v;
            Ok((ok, format!("mean {m:.4}, var {v:.4} (target {target:.4})")))
        }),
        check("multinomial ancestor frequencies", || {
            let k = 4;
            let rounds = 100_000;
            let mut counts = vec![0usize; k];
            let mut rng = stream(11);
            for _ in 0..rounds {
                for a in sample_ancestors(&[0.25; 4], k, &mut rng) {
                    counts[a] += 1;
                }
            }
            let n = (rounds * k) as f64;
            let se = (0.25 * 0.75 / n).sqrt();
            let worst = counts.iter().map(|c| (*c as f64 / n - 0.25).abs() / se).fold(0.0, f64::max);
            Ok((worst < 3.0, format!("max deviation {worst:.2} standard errors")))
        }),
        check("resampling unbiasedness", || {
            let world = mixture_3()?;
            let schedule = NoiseSchedule::rescaled_linear(100)?;
            let config = SteeringConfig::defaults(4, &schedule)?;
            let reward = |_: &[f64], _: usize| 0.0;
            let base = crate::smc::initialize(&[0.0; 4], &config, &reward, &world, &schedule, 5)?;
            let log_w = [0.3, -1.2, 0.8, 0.0];
            let w = normalize_log_potentials(&log_w)?;
            let f = |p: &crate::smc::Particle| p.state[0];
            let weighted: f64 = base.particles.iter().zip(&w).map(|(p, w)| w * f(p)).sum();
            let trials = 10_000;
            let means: Vec<f64> = (0..trials)
                .map(|i| {
                    let mut e: Ensemble = base.clone();
                    e.seed = i as u64;
                    for (p, l) in e.particles.iter_mut().zip(&log_w) {
                        p.log_potential = *l;
                    }
                    let r = multinomial_resample(&e)?;
                    Ok(r.particles.iter().map(f).sum::<f64>() / 4.0)
                })
                .collect::<Result<_>>()?;
            let m = mean(&means);
            let se = standard_error(&means);
            Ok(((m - weighted).abs() < 3.0 * se, format!("resampled {m:.4} vs weighted {weighted:.4}")))
        }),
        check("tilted target, K = 64", || {
            let r = tilted_gaussian_check(64, 2000, 1.0, 0.5, 2024)?;
            let ok = r.ks_closed_form < 0.05 && r.ks_rejection < 0.05;
            Ok((
                ok,
                format!(
                    "KS vs N({}, 1) = {:.4}, KS vs rejection = {:.4}, mean {:.4}",
                    r.target_mean, r.ks_closed_form, r.ks_rejection, r.steered_mean
                ),
            ))
        }),
    ]
}

pub fn run_checks(level: Level) -> Vec<CheckResult> {
    let mut out = fast_checks();
    if level == Level::Full {
        out.extend(full_checks());
    }
    out
}
