//! Test-time rewards: the adaptive candidate set, the annealed log-mass /
//! entropy pseudo-label reward and the ground-truth log-likelihood reward.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::models::{log_sum_exp, GaussianMixtureWorld};
use crate::{Error, Result};

/// A reward on Tweedie estimates, evaluated with the timestep of the scored state.
pub trait RewardFn: Sync {
    fn reward(&self, x_hat: &[f64], t: usize) -> f64;
}

impl<F> RewardFn for F
where
    F: Fn(&[f64], usize) -> f64 + Sync,
{
    fn reward(&self, x_hat: &[f64], t: usize) -> f64 {
        self(x_hat, t)
    }
}

/// Rewards with an analytic gradient in `x_hat`.
pub trait RewardGradient: RewardFn {
    fn gradient(&self, x_hat: &[f64], t: usize) -> Vec<f64>;
}

/// Classes by descending probability on the corrupted input, truncated to the
/// shortest prefix whose mass reaches the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    labels: Vec<usize>,
    cumulative_mass: f64,
}

impl CandidateSet {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cumulative_mass(&self) -> f64 {
        self.cumulative_mass
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.contains(&label)
    }

    /// Every class, in index order.
    pub fn all(classes: usize) -> Self {
        Self {
            labels: (0..classes).collect(),
            cumulative_mass: 1.0,
        }
    }
}

fn check_normalized(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::EmptyProbabilities);
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| *p < 0.0) {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

pub fn build_candidate_set(probs: &[f64], threshold_percent: f64) -> Result<CandidateSet> {
    check_normalized(probs)?;
    let target = threshold_percent / 100.0;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut labels = Vec::new();
    let mut mass = 0.0;
    for k in order {
        labels.push(k);
        mass += probs[k];
        if mass >= target - 1e-12 {
            break;
        }
    }
    Ok(CandidateSet {
        labels,
        cumulative_mass: mass,
    })
}

/// Linear annealing weight over a diffusion range of `steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSchedule {
    steps: usize,
}

impl RewardSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Steering("reward schedule needs N >= 1".into()));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        anneal_alpha(t, self.steps)
    }
}

/// `1 - t / N`: zero at the start of the reverse chain, one at the clean end.
pub fn anneal_alpha(t: usize, steps: usize) -> Result<f64> {
    if t > steps || steps == 0 {
        return Err(Error::StepOutOfRange { t, max: steps });
    }
    Ok(1.0 - t as f64 / steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// `-sum_{y in C} p log p` with the full-vocabulary probabilities.
    #[default]
    Raw,
    /// Entropy of the probabilities renormalized over the candidate set.
    Renormalized,
}

impl fmt::Display for EntropyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyMode::Raw => "raw",
            EntropyMode::Renormalized => "renormalized",
        })
    }
}

impl FromStr for EntropyMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "raw" => Ok(EntropyMode::Raw),
            "renormalized" => Ok(EntropyMode::Renormalized),
            other => Err(format!("unknown entropy mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub threshold_percent: f64,
    pub schedule: RewardSchedule,
    pub entropy: EntropyMode,
}

impl RewardSpec {
    pub fn new(threshold_percent: f64, steps: usize) -> Result<Self> {
        if !(threshold_percent > 0.0 && threshold_percent <= 100.0) {
            return Err(Error::Steering(format!(
                "threshold P = {threshold_percent} must lie in (0, 100]"
            )));
        }
        Ok(Self {
            threshold_percent,
            schedule: RewardSchedule::new(steps)?,
            entropy: EntropyMode::Raw,
        })
    }

    pub fn with_entropy(mut self, entropy: EntropyMode) -> Self {
        self.entropy = entropy;
        self
    }
}

/// `log sum_{y in C} p(y | x_hat)`, accumulated in the log domain.
pub fn candidate_log_mass(probs: &[f64], cset: &CandidateSet) -> f64 {
    let logs: Vec<f64> = cset.labels.iter().map(|&y| probs[y].ln()).collect();
    log_sum_exp(&logs)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// `-sum_{y in C} p log p`, not renormalized over the set.
pub fn restricted_entropy(probs: &[f64], cset: &CandidateSet) -> f64 {
    -cset.labels.iter().map(|&y| plogp(probs[y])).sum::<f64>()
}

pub fn renormalized_entropy(probs: &[f64], cset: &CandidateSet) -> f64 {
    let mass: f64 = cset.labels.iter().map(|&y| probs[y]).sum();
    if mass <= 0.0 {
        return 0.0;
    }
    -cset.labels.iter().map(|&y| plogp(probs[y] / mass)).sum::<f64>()
}

/// `(1 - alpha(t)) log sum_C p(y | x_hat) - alpha(t) H_C(x_hat)`.
pub fn steering_reward(
    x_hat: &[f64],
    t: usize,
    cset: &CandidateSet,
    spec: &RewardSpec,
    world: &GaussianMixtureWorld,
) -> Result<f64> {
    world.check_dim(x_hat)?;
    let alpha = spec.schedule.alpha(t)?;
    let probs = world.classifier_probs(x_hat);
    Ok(combine(&probs, alpha, cset, spec.entropy))
}

fn combine(probs: &[f64], alpha: f64, cset: &CandidateSet, entropy: EntropyMode) -> f64 {
    let mut r = 0.0;
    if alpha < 1.0 {
        r += (1.0 - alpha) * candidate_log_mass(probs, cset);
    }
    if alpha > 0.0 {
        let h = match entropy {
            EntropyMode::Raw => restricted_entropy(probs, cset),
            EntropyMode::Renormalized => renormalized_entropy(probs, cset),
        };
        r -= alpha * h;
    }
    r
}

/// `log p(true_label | x_hat)`.
pub fn gt_reward(x_hat: &[f64], true_label: usize, world: &GaussianMixtureWorld) -> Result<f64> {
    if true_label >= world.num_classes() {
        return Err(Error::InvalidLabel {
            label: true_label,
            classes: world.num_classes(),
        });
    }
    world.check_dim(x_hat)?;
    Ok(world.classifier_log_probs(x_hat)[true_label])
}

/// Pseudo-label reward bound to a world and a candidate set built from the corrupted input.
#[derive(Debug, Clone)]
pub struct PseudoLabelReward<'w> {
    world: &'w GaussianMixtureWorld,
    cset: CandidateSet,
    spec: RewardSpec,
}

impl<'w> PseudoLabelReward<'w> {
    pub fn new(world: &'w GaussianMixtureWorld, cset: CandidateSet, spec: RewardSpec) -> Self {
        Self { world, cset, spec }
    }

    /// Builds the candidate set once from `p(. | x0_corrupted)`.
    pub fn for_input(world: &'w GaussianMixtureWorld, x0_corrupted: &[f64], spec: RewardSpec) -> Result<Self> {
        world.check_dim(x0_corrupted)?;
        let cset = build_candidate_set(&world.classifier_probs(x0_corrupted), spec.threshold_percent)?;
        Ok(Self::new(world, cset, spec))
    }

    pub fn candidate_set(&self) -> &CandidateSet {
        &self.cset
    }

    fn alpha(&self, t: usize) -> f64 {
        // Steps beyond the range are clamped to the exploration end.
        self.spec.schedule.alpha(t.min(self.spec.schedule.steps())).unwrap_or(0.0)
    }
}

impl RewardFn for PseudoLabelReward<'_> {
    fn reward(&self, x_hat: &[f64], t: usize) -> f64 {
        let probs = self.world.classifier_probs(x_hat);
        combine(&probs, self.alpha(t), &self.cset, self.spec.entropy)
    }
}

/// `sum_j p_j g_j` and per-class `grad p_y = p_y (g_y - g_bar)`.
fn prob_gradients(world: &GaussianMixtureWorld, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let probs = world.classifier_probs(x);
    let grads = world.class_log_density_grads(x);
    let mut g_bar = vec![0.0; x.len()];
    for (p, g) in probs.iter().zip(&grads) {
        for (b, gj) in g_bar.iter_mut().zip(g) {
            *b += p * gj;
        }
    }
    let dp = probs
        .iter()
        .zip(&grads)
        .map(|(p, g)| g.iter().zip(&g_bar).map(|(gj, bj)| p * (gj - bj)).collect())
        .collect();
    (probs, dp)
}

impl RewardGradient for PseudoLabelReward<'_> {
    fn gradient(&self, x_hat: &[f64], t: usize) -> Vec<f64> {
        let alpha = self.alpha(t);
        let (probs, dp) = prob_gradients(self.world, x_hat);
        let labels = &self.cset.labels;
        let mass: f64 = labels.iter().map(|&y| probs[y]).sum();
        let mut dmass = vec![0.0; x_hat.len()];
        for &y in labels {
            for (m, d) in dmass.iter_mut().zip(&dp[y]) {
                *m += d;
            }
        }
        let mut grad = vec![0.0; x_hat.len()];
        if alpha < 1.0 && mass > 0.0 {
            for (g, d) in grad.iter_mut().zip(&dmass) {
                *g += (1.0 - alpha) * d / mass;
            }
        }
        if alpha > 0.0 {
            // grad of -H, accumulated as alpha * sum (log p + 1) grad p for the raw form.
            for &y in labels {
                let p = probs[y];
                if p <= 0.0 {
                    continue;
                }
                match self.spec.entropy {
                    EntropyMode::Raw => {
                        let c = alpha * (p.ln() + 1.0);
                        for (g, d) in grad.iter_mut().zip(&dp[y]) {
                            *g += c * d;
                        }
                    }
                    EntropyMode::Renormalized => {
                        let q = p / mass;
                        let c = alpha * q.ln();
                        for ((g, d), dm) in grad.iter_mut().zip(&dp[y]).zip(&dmass) {
                            *g += c * (d / mass - p * dm / (mass * mass));
                        }
                    }
                }
            }
        }
        grad
    }
}

/// Ground-truth log-likelihood reward; the oracle upper bound.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthReward<'w> {
    world: &'w GaussianMixtureWorld,
    label: usize,
}

impl<'w> GroundTruthReward<'w> {
    pub fn new(world: &'w GaussianMixtureWorld, label: usize) -> Result<Self> {
        if label >= world.num_classes() {
            return Err(Error::InvalidLabel {
                label,
                classes: world.num_classes(),
            });
        }
        Ok(Self { world, label })
    }
}

impl RewardFn for GroundTruthReward<'_> {
    fn reward(&self, x_hat: &[f64], _t: usize) -> f64 {
        self.world.classifier_log_probs(x_hat)[self.label]
    }
}

impl RewardGradient for GroundTruthReward<'_> {
    fn gradient(&self, x_hat: &[f64], _t: usize) -> Vec<f64> {
        let (probs, dp) = prob_gradients(self.world, x_hat);
        let p = probs[self.label];
        dp[self.label].iter().map(|d| d / p).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_prefixes() {
        let c = build_candidate_set(&[0.5, 0.3, 0.1, 0.1], 70.0).unwrap();
        assert_eq!(c.labels(), &[0, 1]);
        assert!((c.cumulative_mass() - 0.8).abs() < 1e-15);

        let c = build_candidate_set(&[0.8, 0.1, 0.1], 70.0).unwrap();
        assert_eq!(c.labels(), &[0]);
        assert!((c.cumulative_mass() - 0.8).abs() < 1e-15);

        let c = build_candidate_set(&[0.1; 10], 70.0).unwrap();
        assert_eq!(c.len(), 7);
        assert_eq!(c.labels(), &[0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn candidate_order_is_descending_with_index_ties() {
        let c = build_candidate_set(&[0.1, 0.3, 0.3, 0.3], 90.0).unwrap();
        assert_eq!(c.labels(), &[1, 2, 3]);
    }

    #[test]
    fn candidate_errors() {
        assert!(matches!(build_candidate_set(&[], 70.0), Err(Error::EmptyProbabilities)));
        assert!(matches!(build_candidate_set(&[0.5, 0.2], 70.0), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn alpha_endpoints() {
        assert_eq!(anneal_alpha(50, 50).unwrap(), 0.0);
        assert_eq!(anneal_alpha(0, 50).unwrap(), 1.0);
        assert_eq!(anneal_alpha(25, 50).unwrap(), 0.5);
        assert!(anneal_alpha(51, 50).is_err());
    }

    #[test]
    fn entropy_closed_forms() {
        let all4 = CandidateSet::all(4);
        assert!((restricted_entropy(&[0.25; 4], &all4) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(restricted_entropy(&[0.0, 1.0, 0.0, 0.0], &all4), 0.0);
        let two = build_candidate_set(&[0.5, 0.3, 0.2], 70.0).unwrap();
        let h = restricted_entropy(&[0.5, 0.3, 0.2], &two);
        assert!((h - 0.707_765_431_577_753_5).abs() < 1e-12);
    }

    #[test]
    fn log_mass() {
        assert_eq!(candidate_log_mass(&[0.2, 0.3, 0.5], &CandidateSet::all(3)), 0.0);
        let c = build_candidate_set(&[0.5, 0.3, 0.2], 50.0).unwrap();
        assert!((candidate_log_mass(&[0.5, 0.3, 0.2], &c) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(candidate_log_mass(&[0.0, 1.0], &build_candidate_set(&[1.0, 0.0], 50.0).unwrap()), f64::NEG_INFINITY);
    }

    #[test]
    fn gt_reward_rejects_bad_label() {
        let w = GaussianMixtureWorld::isotropic(vec![vec![0.0], vec![1.0]], 1.0).unwrap();
        assert!(gt_reward(&[0.0], 2, &w).is_err());
        assert!(GroundTruthReward::new(&w, 5).is_err());
        assert!((gt_reward(&[0.5], 1, &w).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }
}
