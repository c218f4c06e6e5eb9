//! Adaptation pipeline and verification oracles.
//!
//! [`adapt`] dispatches a corrupted input to one of the adaptation methods,
//! [`predict_ensemble`] averages the classifier on the original and adapted
//! inputs, and [`run_experiment`] sweeps a corruption grid. The rejection
//! sampler and [`compare_distributions`] check the steered sampler against
//! exact draws from the reward-tilted target.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::{argmax, CorruptionKind, CorruptionOperator, GaussianMixtureWorld};
use crate::par::{map_indexed, ExecMode};
use crate::reward::{GroundTruthReward, PseudoLabelReward, RewardFn, RewardSpec};
use crate::rng::{derive_seed, substream, tag};
use crate::schedule::NoiseSchedule;
use crate::smc::{single_trajectory, steer, ProposalKind, SteeringConfig, StepRecord};
use crate::stats::{ks_two_sample, mean, variance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    None,
    PureDiffusion,
    GradGuided,
    Steering,
    SteeringGt,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::None,
        MethodKind::PureDiffusion,
        MethodKind::GradGuided,
        MethodKind::Steering,
        MethodKind::SteeringGt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::None => "none",
            MethodKind::PureDiffusion => "pure_diffusion",
            MethodKind::GradGuided => "grad_guided",
            MethodKind::Steering => "steering",
            MethodKind::SteeringGt => "steering_gt",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// A method together with the parameters every kind may need.
#[derive(Debug, Clone)]
pub struct AdaptationMethod {
    pub kind: MethodKind,
    pub steering: SteeringConfig,
    pub reward: RewardSpec,
    /// Reward-gradient scale `s` of the gradient-guided baseline.
    pub grad_scale: f64,
}

impl AdaptationMethod {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.kind != MethodKind::None {
            self.steering.validate(schedule)?;
        }
        if !(self.grad_scale >= 0.0 && self.grad_scale.is_finite()) {
            return Err(Error::Steering(format!("grad scale {} must be finite and >= 0", self.grad_scale)));
        }
        Ok(())
    }
}

/// Adapted input plus the steering history when the method produces one.
#[derive(Debug, Clone)]
pub struct Adapted {
    pub x: Vec<f64>,
    pub history: Option<Vec<StepRecord>>,
}

/// Adapts `x0_corrupted`. `true_label` is only consulted by `steering_gt`.
pub fn adapt(
    x0_corrupted: &[f64],
    method: &AdaptationMethod,
    true_label: Option<usize>,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Adapted> {
    method.validate(schedule)?;
    world.check_dim(x0_corrupted)?;
    let plain = |x: Vec<f64>| Adapted { x, history: None };
    match method.kind {
        MethodKind::None => Ok(plain(x0_corrupted.to_vec())),
        MethodKind::PureDiffusion => {
            let mut config = method.steering.clone();
            config.proposal = ProposalKind::UnbiasedReverse;
            single_trajectory(x0_corrupted, &config, None, world, schedule, seed).map(plain)
        }
        MethodKind::GradGuided => {
            let reward = PseudoLabelReward::for_input(world, x0_corrupted, method.reward)?;
            single_trajectory(
                x0_corrupted,
                &method.steering,
                Some((method.grad_scale, &reward)),
                world,
                schedule,
                seed,
            )
            .map(plain)
        }
        MethodKind::Steering => {
            let reward = PseudoLabelReward::for_input(world, x0_corrupted, method.reward)?;
            run_steer(x0_corrupted, &method.steering, &reward, world, schedule, seed)
        }
        MethodKind::SteeringGt => {
            let label = true_label.ok_or_else(|| Error::Steering("steering_gt needs the true label".into()))?;
            let reward = GroundTruthReward::new(world, label)?;
            run_steer(x0_corrupted, &method.steering, &reward, world, schedule, seed)
        }
    }
}

fn run_steer(
    x0: &[f64],
    config: &SteeringConfig,
    reward: &dyn RewardFn,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Adapted> {
    let out = steer(x0, config, reward, world, schedule, seed)?;
    Ok(Adapted {
        x: out.adapted,
        history: Some(out.ensemble.history),
    })
}

/// `argmax_y (p(y | x0) + p(y | x_adapted)) / 2`, ties to the lower class.
pub fn predict_ensemble(x0_corrupted: &[f64], x0_adapted: &[f64], world: &GaussianMixtureWorld) -> usize {
    let a = world.classifier_probs(x0_corrupted);
    let b = world.classifier_probs(x0_adapted);
    let avg: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
    argmax(&avg)
}

/// One corruption setting of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionCell {
    pub level: u32,
    pub operator: CorruptionOperator,
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub world: GaussianMixtureWorld,
    pub schedule: NoiseSchedule,
    pub steering: SteeringConfig,
    pub reward: RewardSpec,
    pub grad_scale: f64,
    pub methods: Vec<MethodKind>,
    pub cells: Vec<CorruptionCell>,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub config_digest: String,
    pub exec: ExecMode,
    pub diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub kind: CorruptionKind,
    pub severity: u32,
    pub method: MethodKind,
    pub acc_adapted: f64,
    pub acc_baseline: f64,
    pub acc_ensemble: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodKind,
    pub avg_adapted: Option<f64>,
    pub avg_baseline: Option<f64>,
    /// Mean of the per-cell ensemble accuracies.
    pub avg_ensemble: Option<f64>,
    /// Mean ensemble accuracy per reporting category.
    pub per_category: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub kind: CorruptionKind,
    pub severity: u32,
    pub method: MethodKind,
    pub sample: usize,
    pub record: StepRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub cells: Vec<CellMetrics>,
    pub summary: Vec<MethodSummary>,
    pub seed: u64,
    pub config_digest: String,
    #[serde(skip)]
    pub diagnostics: Vec<DiagnosticRow>,
}

impl RunMetrics {
    pub fn summary_for(&self, method: MethodKind) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn average_ensemble(&self, method: MethodKind) -> Option<f64> {
        self.summary_for(method).and_then(|s| s.avg_ensemble)
    }

    pub fn average_adapted(&self, method: MethodKind) -> Option<f64> {
        self.summary_for(method).and_then(|s| s.avg_adapted)
    }

    pub fn average_baseline(&self) -> Option<f64> {
        self.summary.first().and_then(|s| s.avg_baseline)
    }

    pub const CSV_HEADER: &'static str = "kind,severity,method,acc_adapted,acc_baseline,acc_ensemble,n,seed";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{},{}\n",
                c.kind, c.severity, c.method, c.acc_adapted, c.acc_baseline, c.acc_ensemble, c.n, self.seed
            ));
        }
        out
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("kind,severity,method,sample,step,particle_ess,resampled,max_reward,mean_reward\n");
        for d in &self.diagnostics {
            let r = &d.record;
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{},{:.9},{:.9}\n",
                d.kind, d.severity, d.method, d.sample, r.step, r.ess, r.resampled, r.max_reward, r.mean_reward
            ));
        }
        out
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    adapted: usize,
    baseline: usize,
    ensemble: usize,
}

struct SampleOutcome {
    per_method: Vec<Tally>,
    histories: Vec<Option<Vec<StepRecord>>>,
}

fn evaluate_sample(exp: &Experiment, cell_index: usize, cell: &CorruptionCell, sample: usize) -> Result<SampleOutcome> {
    let mut rng = substream(exp.seed, &[tag::SAMPLE, sample as u64]);
    let (x0, label) = exp.world.sample(&mut rng);
    let mut crng = substream(exp.seed, &[tag::CORRUPT, cell_index as u64, sample as u64]);
    let corrupted = cell.operator.apply(&x0, &mut crng)?;
    let baseline_ok = exp.world.predict(&corrupted) == label;
    let adapt_seed = derive_seed(exp.seed, &[tag::ADAPT, cell_index as u64, sample as u64]);
    let mut per_method = Vec::with_capacity(exp.methods.len());
    let mut histories = Vec::with_capacity(exp.methods.len());
    for &kind in &exp.methods {
        let method = AdaptationMethod {
            kind,
            steering: exp.steering.clone(),
            reward: exp.reward,
            grad_scale: exp.grad_scale,
        };
        let adapted = adapt(&corrupted, &method, Some(label), &exp.world, &exp.schedule, adapt_seed)?;
        per_method.push(Tally {
            adapted: usize::from(exp.world.predict(&adapted.x) == label),
            baseline: usize::from(baseline_ok),
            ensemble: usize::from(predict_ensemble(&corrupted, &adapted.x, &exp.world) == label),
        });
        histories.push(if exp.diagnostics { adapted.history } else { None });
    }
    Ok(SampleOutcome { per_method, histories })
}

/// Runs every (cell, sample, method) combination and aggregates accuracies.
/// Samples are shared across cells and adaptation seeds across methods.
pub fn run_experiment(exp: &Experiment) -> Result<RunMetrics> {
    let n = exp.samples_per_cell;
    if n == 0 {
        return Ok(RunMetrics {
            cells: Vec::new(),
            summary: exp
                .methods
                .iter()
                .map(|&method| MethodSummary {
                    method,
                    avg_adapted: None,
                    avg_baseline: None,
                    avg_ensemble: None,
                    per_category: BTreeMap::new(),
                })
                .collect(),
            seed: exp.seed,
            config_digest: exp.config_digest.clone(),
            diagnostics: Vec::new(),
        });
    }
    let total = exp.cells.len() * n;
    let outcomes = map_indexed(exp.exec, total, |job| {
        let (c, s) = (job / n, job % n);
        evaluate_sample(exp, c, &exp.cells[c], s)
    });

    let mut cells = Vec::with_capacity(exp.cells.len() * exp.methods.len());
    let mut diagnostics = Vec::new();
    let mut outcomes = outcomes.into_iter();
    for cell in &exp.cells {
        let mut tallies = vec![Tally::default(); exp.methods.len()];
        for s in 0..n {
            let outcome = outcomes.next().expect("one outcome per job")?;
            for (m, t) in outcome.per_method.iter().enumerate() {
                tallies[m].adapted += t.adapted;
                tallies[m].baseline += t.baseline;
                tallies[m].ensemble += t.ensemble;
            }
            for (m, h) in outcome.histories.into_iter().enumerate() {
                for record in h.into_iter().flatten() {
                    diagnostics.push(DiagnosticRow {
                        kind: cell.operator.kind,
                        severity: cell.level,
                        method: exp.methods[m],
                        sample: s,
                        record,
                    });
                }
            }
        }
        for (m, t) in tallies.iter().enumerate() {
            let frac = |k: usize| k as f64 / n as f64;
            cells.push(CellMetrics {
                kind: cell.operator.kind,
                severity: cell.level,
                method: exp.methods[m],
                acc_adapted: frac(t.adapted),
                acc_baseline: frac(t.baseline),
                acc_ensemble: frac(t.ensemble),
                n,
            });
        }
    }
    let summary = exp.methods.iter().map(|&m| summarize(&cells, m)).collect();
    Ok(RunMetrics {
        cells,
        summary,
        seed: exp.seed,
        config_digest: exp.config_digest.clone(),
        diagnostics,
    })
}

fn summarize(cells: &[CellMetrics], method: MethodKind) -> MethodSummary {
    let mine: Vec<&CellMetrics> = cells.iter().filter(|c| c.method == method).collect();
    let avg = |f: fn(&CellMetrics) -> f64| {
        (!mine.is_empty()).then(|| mine.iter().map(|c| f(c)).sum::<f64>() / mine.len() as f64)
    };
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in &mine {
        groups.entry(c.kind.category().to_string()).or_default().push(c.acc_ensemble);
    }
    MethodSummary {
        method,
        avg_adapted: avg(|c| c.acc_adapted),
        avg_baseline: avg(|c| c.acc_baseline),
        avg_ensemble: avg(|c| c.acc_ensemble),
        per_category: groups.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
    }
}

/// Exact draws from `base * exp(lambda * r)` by accepting base samples with
/// probability `exp(lambda * (r(x) - upper_bound))`.
pub fn rejection_sample_tilted<R, S>(
    mut base_sampler: S,
    reward: &dyn RewardFn,
    lambda: f64,
    reward_upper_bound: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> Vec<f64>,
{
    const MIN_TRIALS: u64 = 1_000_000;
    let mut out = Vec::with_capacity(n);
    let mut tried: u64 = 0;
    while out.len() < n {
        let x = base_sampler(rng);
        tried += 1;
        let r = reward.reward(&x, 0);
        if r > reward_upper_bound {
            return Err(Error::RewardAboveBound {
                reward: r,
                bound: reward_upper_bound,
            });
        }
        let accept = (lambda * (r - reward_upper_bound)).exp();
        if rng.random::<f64>() < accept {
            out.push(x);
        }
        if tried >= MIN_TRIALS && (out.len() as f64) < 1e-6 * tried as f64 {
            return Err(Error::AcceptanceTooLow {
                rate: out.len() as f64 / tried as f64,
                tried,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `mean_b - mean_a` per coordinate.
    pub mean_diff: Vec<f64>,
    /// `var_b - var_a` per coordinate.
    pub var_diff: Vec<f64>,
    pub ks_coords: Vec<f64>,
    pub ks_reward: Option<f64>,
}

impl DivergenceReport {
    pub fn max_ks(&self) -> f64 {
        self.ks_coords
            .iter()
            .copied()
            .chain(self.ks_reward)
            .fold(0.0, f64::max)
    }
}

pub fn compare_distributions(
    samples_a: &[Vec<f64>],
    samples_b: &[Vec<f64>],
    reward: Option<&dyn RewardFn>,
) -> Result<DivergenceReport> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::Steering("both sample sets must be nonempty".into()));
    }
    let dim = samples_a[0].len();
    if let Some(bad) = samples_a.iter().chain(samples_b).find(|s| s.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.len(),
        });
    }
    let column = |s: &[Vec<f64>], j: usize| s.iter().map(|x| x[j]).collect::<Vec<f64>>();
    let moments = |xs: &[f64]| (mean(xs), if xs.len() > 1 { variance(xs) } else { 0.0 });
    let mut report = DivergenceReport {
        mean_diff: Vec::with_capacity(dim),
        var_diff: Vec::with_capacity(dim),
        ks_coords: Vec::with_capacity(dim),
        ks_reward: None,
    };
    for j in 0..dim {
        let (a, b) = (column(samples_a, j), column(samples_b, j));
        let ((ma, va), (mb, vb)) = (moments(&a), moments(&b));
        report.mean_diff.push(mb - ma);
        report.var_diff.push(vb - va);
        report.ks_coords.push(ks_two_sample(&a, &b));
    }
    if let Some(r) = reward {
        let ra: Vec<f64> = samples_a.iter().map(|x| r.reward(x, 0)).collect();
        let rb: Vec<f64> = samples_b.iter().map(|x| r.reward(x, 0)).collect();
        report.ks_reward = Some(ks_two_sample(&ra, &rb));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn world() -> GaussianMixtureWorld {
        GaussianMixtureWorld::isotropic(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0).unwrap()
    }

    #[test]
    fn ensemble_arithmetic() {
        let w = world();
        let x = [0.3, 0.0];
        assert_eq!(predict_ensemble(&x, &x, &w), w.predict(&x));
        // Probabilities of class 0 at x: sigmoid(-2 x0); pick points giving 0.6 and 0.2.
        let at = |p0: f64| [-(p0 / (1.0 - p0)).ln() / 2.0, 0.0];
        let (a, b) = (at(0.6), at(0.2));
        assert!((w.classifier_probs(&a)[0] - 0.6).abs() < 1e-12);
        assert_eq!(predict_ensemble(&a, &b, &w), 1);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in MethodKind::ALL {
            assert_eq!(m.as_str().parse::<MethodKind>().unwrap(), m);
        }
        assert!("dda".parse::<MethodKind>().is_err());
    }

    #[test]
    fn no_adaptation_is_identity() {
        let w = world();
        let s = NoiseSchedule::rescaled_linear(50).unwrap();
        let method = AdaptationMethod {
            kind: MethodKind::None,
            steering: SteeringConfig::defaults(2, &s).unwrap(),
            reward: RewardSpec::new(70.0, 50).unwrap(),
            grad_scale: 1.0,
        };
        let x = [0.25, -3.0];
        assert_eq!(adapt(&x, &method, None, &w, &s, 0).unwrap().x, x);
    }

    #[test]
    fn gt_steering_requires_label() {
        let w = world();
        let s = NoiseSchedule::rescaled_linear(50).unwrap();
        let method = AdaptationMethod {
            kind: MethodKind::SteeringGt,
            steering: SteeringConfig::defaults(2, &s).unwrap(),
            reward: RewardSpec::new(70.0, 50).unwrap(),
            grad_scale: 1.0,
        };
        assert!(adapt(&[0.0, 0.0], &method, None, &w, &s, 0).is_err());
        assert!(adapt(&[0.0, 0.0], &method, Some(1), &w, &s, 0).is_ok());
    }

    #[test]
    fn rejection_with_zero_lambda_keeps_everything() {
        let mut rng = stream(3);
        let mut counter = 0.0;
        let out = rejection_sample_tilted(
            |_: &mut _| {
                counter += 1.0;
                vec![counter]
            },
            &|x: &[f64], _: usize| -x[0],
            0.0,
            0.0,
            50,
            &mut rng,
        )
        .unwrap();
        let expected: Vec<Vec<f64>> = (1..=50).map(|i| vec![i as f64]).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn rejection_aborts_when_hopeless() {
        let mut rng = stream(3);
        let err = rejection_sample_tilted(|_: &mut _| vec![0.0], &|_: &[f64], _: usize| -100.0, 1.0, 0.0, 1, &mut rng);
        assert!(matches!(err, Err(Error::AcceptanceTooLow { .. })));
        let err = rejection_sample_tilted(|_: &mut _| vec![0.0], &|_: &[f64], _: usize| 1.0, 1.0, 0.0, 1, &mut rng);
        assert!(matches!(err, Err(Error::RewardAboveBound { .. })));
    }

    #[test]
    fn identical_samples_have_zero_divergence() {
        let a: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = compare_distributions(&a, &a, Some(&|x: &[f64], _: usize| x[0] - x[1])).unwrap();
        assert!(r.mean_diff.iter().chain(&r.var_diff).chain(&r.ks_coords).all(|v| *v == 0.0));
        assert_eq!(r.ks_reward, Some(0.0));
        assert!(compare_distributions(&a, &[], None).is_err());
    }
}
