//! The analytic world: a diagonal Gaussian mixture whose noisy marginals,
//! score and Bayes classifier are all closed form, together with spectral
//! corruptions and the low-pass filter used by guided proposals.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{standard_normal_vec, substream};
use crate::schedule::NoiseSchedule;
use crate::spectral::Spectrum;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Diagonal-covariance Gaussian mixture. Component index is the class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureWorld {
    dim: usize,
    components: Vec<Component>,
}

/// Parameters of a generated world with isotropic, equal-variance components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldLayout {
    pub dim: usize,
    pub classes: usize,
    pub min_separation: f64,
    pub variance: f64,
    /// Standard deviation of the Gaussian the means are drawn from.
    pub mean_scale: f64,
    pub layout_seed: u64,
}

impl Default for WorldLayout {
    fn default() -> Self {
        Self {
            dim: 16,
            classes: 10,
            min_separation: 4.0,
            variance: 1.0,
            mean_scale: 1.0,
            layout_seed: 20_240_601,
        }
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn diag_log_normal(x: &[f64], mean: impl Fn(usize) -> f64, var: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for (j, xj) in x.iter().enumerate() {
        let v = var(j);
        let d = xj - mean(j);
        acc += d * d / v + v.ln() + LN_2PI;
    }
    -0.5 * acc
}

impl GaussianMixtureWorld {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::World("at least two components are required".into()));
        }
        let dim = components[0].mean.len();
        if dim == 0 {
            return Err(Error::World("dimension must be positive".into()));
        }
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.variance.len() != dim {
                return Err(Error::World(format!("component {k} has inconsistent dimension")));
            }
            if !(c.weight > 0.0) {
                return Err(Error::World(format!("component {k} weight must be positive")));
            }
            if c.variance.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::World(format!("component {k} has a nonpositive variance")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::World(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, components })
    }

    /// Single-component world. It cannot classify, but it is the natural
    /// testbed for the tilted-target checks.
    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() || !(variance > 0.0) {
            return Err(Error::World("single component needs dim >= 1 and variance > 0".into()));
        }
        let dim = mean.len();
        Ok(Self {
            dim,
            components: vec![Component {
                weight: 1.0,
                mean,
                variance: vec![variance; dim],
            }],
        })
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::single(vec![0.0; dim], 1.0)
    }

    /// Equal-weight isotropic mixture with the given means.
    pub fn isotropic(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let w = 1.0 / means.len().max(1) as f64;
        let dim = means.first().map_or(0, Vec::len);
        Self::new(
            means
                .into_iter()
                .map(|mean| Component {
                    weight: w,
                    mean,
                    variance: vec![variance; dim],
                })
                .collect(),
        )
    }

    /// Draws means one at a time from `N(0, mean_scale^2 I)`, rejecting any
    /// candidate closer than `min_separation` to an accepted mean.
    pub fn from_layout(layout: &WorldLayout) -> Result<Self> {
        if layout.classes < 2 || layout.dim == 0 {
            return Err(Error::World("layout needs dim >= 1 and classes >= 2".into()));
        }
        if !(layout.mean_scale > 0.0) || !(layout.min_separation >= 0.0) {
            return Err(Error::World("layout scale and separation must be positive".into()));
        }
        let mut rng = substream(layout.layout_seed, &[layout.dim as u64, layout.classes as u64]);
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(layout.classes);
        let max_attempts = 100_000;
        let mut attempts = 0;
        while means.len() < layout.classes {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::World(format!(
                    "could not place {} means with separation {} in {} attempts",
                    layout.classes, layout.min_separation, max_attempts
                )));
            }
            let cand: Vec<f64> = standard_normal_vec(&mut rng, layout.dim)
                .into_iter()
                .map(|z| z * layout.mean_scale)
                .collect();
            let far = means.iter().all(|m| {
                m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                    >= layout.min_separation
            });
            if far {
                means.push(cand);
            }
        }
        Self::isotropic(means, layout.variance)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Draws a labelled clean point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                label = k;
                break;
            }
        }
        let c = &self.components[label];
        let z = standard_normal_vec(rng, self.dim);
        let x = z
            .iter()
            .zip(c.mean.iter().zip(&c.variance))
            .map(|(z, (m, v))| m + v.sqrt() * z)
            .collect();
        (x, label)
    }

    /// Per-component `log w_k + log N_t(x; sqrt(ab) mu_k, ab sigma_k^2 + 1 - ab)`.
    fn noisy_joint_log_densities(&self, x: &[f64], ab: f64) -> Vec<f64> {
        let signal = ab.sqrt();
        self.components
            .iter()
            .map(|c| {
                c.weight.ln()
                    + diag_log_normal(x, |j| signal * c.mean[j], |j| ab * c.variance[j] + 1.0 - ab)
            })
            .collect()
    }

    /// Log-density of the noised marginal `q_t` at `x`.
    pub fn noisy_log_density(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> f64 {
        log_sum_exp(&self.noisy_joint_log_densities(x, schedule.alpha_bar(t)))
    }

    /// `grad log q_t(x)` of the noised mixture.
    pub fn noisy_score(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
        let ab = schedule.alpha_bar(t);
        let signal = ab.sqrt();
        let joint = self.noisy_joint_log_densities(x, ab);
        let lse = log_sum_exp(&joint);
        let mut score = vec![0.0; self.dim];
        for (c, lj) in self.components.iter().zip(&joint) {
            let r = (lj - lse).exp();
            if r == 0.0 {
                continue;
            }
            for (j, s) in score.iter_mut().enumerate() {
                let v = ab * c.variance[j] + 1.0 - ab;
                *s -= r * (x[j] - signal * c.mean[j]) / v;
            }
        }
        score
    }

    /// Exact noise prediction `-sqrt(1 - ab_t) grad log q_t(x_t)`; zero at t = 0.
    pub fn exact_noisy_eps(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        if t > schedule.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: schedule.steps(),
            });
        }
        self.check_dim(x_t)?;
        let noise = (1.0 - schedule.alpha_bar(t)).sqrt();
        Ok(self
            .noisy_score(x_t, t, schedule)
            .into_iter()
            .map(|s| -noise * s)
            .collect())
    }

    /// `log p(y | x)` of the Bayes classifier on clean data.
    pub fn classifier_log_probs(&self, x: &[f64]) -> Vec<f64> {
        let joint: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + diag_log_normal(x, |j| c.mean[j], |j| c.variance[j]))
            .collect();
        let lse = log_sum_exp(&joint);
        joint.into_iter().map(|l| l - lse).collect()
    }

    pub fn classifier_probs(&self, x: &[f64]) -> Vec<f64> {
        self.classifier_log_probs(x).into_iter().map(f64::exp).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.classifier_log_probs(x))
    }

    /// `grad_x log(w_k N(x; mu_k, sigma_k^2))` for every class.
    pub fn class_log_density_grads(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                x.iter()
                    .zip(c.mean.iter().zip(&c.variance))
                    .map(|(x, (m, v))| -(x - m) / v)
                    .collect()
            })
            .collect()
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    LowFreqAdditive,
    HighFreqAdditive,
    SpectralBlur,
    ConstantShift,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::SpectralBlur,
        CorruptionKind::ConstantShift,
        CorruptionKind::HighFreqAdditive,
        CorruptionKind::LowFreqAdditive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::LowFreqAdditive => "low_freq_additive",
            CorruptionKind::HighFreqAdditive => "high_freq_additive",
            CorruptionKind::SpectralBlur => "spectral_blur",
            CorruptionKind::ConstantShift => "constant_shift",
        }
    }

    /// Reporting category, matching the blur/digital/noise/weather grouping.
    pub fn category(self) -> &'static str {
        match self {
            CorruptionKind::SpectralBlur => "blur",
            CorruptionKind::ConstantShift => "digital",
            CorruptionKind::HighFreqAdditive => "noise",
            CorruptionKind::LowFreqAdditive => "weather",
        }
    }

    pub fn is_spectral(self) -> bool {
        self != CorruptionKind::ConstantShift
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown corruption kind `{s}`"))
    }
}

/// Half-open range `lo..hi` of DFT frequency indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub lo: usize,
    pub hi: usize,
}

impl FrequencyBand {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.lo >= self.hi || self.hi > dim / 2 + 1 {
            return Err(Error::BandOutOfRange {
                lo: self.lo,
                hi: self.hi,
                dim,
            });
        }
        Ok(())
    }

    pub fn contains(&self, k: usize) -> bool {
        k >= self.lo && k < self.hi
    }
}

impl fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

impl FromStr for FrequencyBand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once("..")
            .ok_or_else(|| format!("expected `lo..hi`, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
        Ok(Self::new(parse(lo)?, parse(hi)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionOperator {
    pub kind: CorruptionKind,
    pub severity: f64,
    pub band: FrequencyBand,
}

/// Amplitude multiplier of severity level `1..=5`; level 0 is the identity.
pub fn severity_amplitude(level: u32) -> f64 {
    0.5 * level as f64
}

impl CorruptionOperator {
    pub fn new(kind: CorruptionKind, severity: f64, band: FrequencyBand) -> Self {
        Self {
            kind,
            severity,
            band,
        }
    }

    pub fn at_level(kind: CorruptionKind, level: u32, base_unit: f64, band: FrequencyBand) -> Self {
        Self::new(kind, severity_amplitude(level) * base_unit, band)
    }

    /// Unit-RMS deterministic sinusoid supported on the band.
    pub fn low_freq_pattern(band: FrequencyBand, dim: usize) -> Vec<f64> {
        let mut p: Vec<f64> = (0..dim)
            .map(|n| {
                (band.lo..band.hi)
                    .map(|k| {
                        let phase = 2.0 * std::f64::consts::PI * (k * n) as f64 / dim as f64;
                        (phase + k as f64).cos()
                    })
                    .sum::<f64>()
            })
            .collect();
        let rms = (p.iter().map(|v| v * v).sum::<f64>() / dim as f64).sqrt();
        if rms > 0.0 {
            p.iter_mut().for_each(|v| *v /= rms);
        }
        p
    }

    pub fn apply<R: Rng + ?Sized>(&self, x0: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let dim = x0.len();
        if self.kind.is_spectral() {
            self.band.validate(dim)?;
        }
        if self.severity == 0.0 {
            return Ok(x0.to_vec());
        }
        let s = self.severity;
        Ok(match self.kind {
            CorruptionKind::ConstantShift => x0.iter().map(|v| v + s).collect(),
            CorruptionKind::LowFreqAdditive => {
                let p = Self::low_freq_pattern(self.band, dim);
                x0.iter().zip(&p).map(|(x, p)| x + s * p).collect()
            }
            CorruptionKind::HighFreqAdditive => {
                let spectrum = Spectrum::new(dim);
                let white = standard_normal_vec(rng, dim);
                let proj = spectrum.band_project(&white, self.band.lo, self.band.hi);
                let bins = (0..dim)
                    .filter(|&b| self.band.contains(spectrum.frequency_of_bin(b)))
                    .count();
                let scale = s * (dim as f64 / bins.max(1) as f64).sqrt();
                x0.iter().zip(&proj).map(|(x, n)| x + scale * n).collect()
            }
            CorruptionKind::SpectralBlur => {
                let spectrum = Spectrum::new(dim);
                let band = self.band;
                let gain = 1.0 / (1.0 + s);
                spectrum.filter(x0, |k| if band.contains(k) { gain } else { 1.0 })
            }
        })
    }
}

/// Hard DFT truncation keeping frequencies `0..cutoff`.
#[derive(Debug, Clone)]
pub struct LowPassFilter {
    cutoff: usize,
    spectrum: Spectrum,
}

impl LowPassFilter {
    pub fn new(cutoff: usize, dim: usize) -> Result<Self> {
        if cutoff == 0 || cutoff > dim {
            return Err(Error::Steering(format!(
                "low-pass cutoff D = {cutoff} must lie in 1..={dim}"
            )));
        }
        Ok(Self {
            cutoff,
            spectrum: Spectrum::new(dim),
        })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.cutoff;
        self.spectrum.filter(x, |k| if k < d { 1.0 } else { 0.0 })
    }

    /// `x - apply(x)`.
    pub fn highpass(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.apply(x)).map(|(a, b)| a - b).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn two_blob() -> GaussianMixtureWorld {
        GaussianMixtureWorld::isotropic(vec![vec![-2.0, 0.0], vec![2.0, 0.0]], 1.0).unwrap()
    }

    #[test]
    fn world_validation() {
        assert!(GaussianMixtureWorld::isotropic(vec![vec![0.0]], 1.0).is_err());
        assert!(GaussianMixtureWorld::isotropic(vec![vec![0.0], vec![1.0]], 0.0).is_err());
        let bad = vec![
            Component { weight: 0.3, mean: vec![0.0], variance: vec![1.0] },
            Component { weight: 0.3, mean: vec![1.0], variance: vec![1.0] },
        ];
        assert!(GaussianMixtureWorld::new(bad).is_err());
    }

    #[test]
    fn layout_respects_separation() {
        let w = GaussianMixtureWorld::from_layout(&WorldLayout::default()).unwrap();
        assert_eq!(w.num_classes(), 10);
        assert_eq!(w.dim(), 16);
        let c = w.components();
        for i in 0..c.len() {
            for j in 0..i {
                let d: f64 = c[i].mean.iter().zip(&c[j].mean).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d.sqrt() >= 4.0);
            }
        }
    }

    #[test]
    fn single_component_label_is_zero() {
        let w = GaussianMixtureWorld::standard_normal(3).unwrap();
        let mut rng = stream(1);
        for _ in 0..100 {
            assert_eq!(w.sample(&mut rng).1, 0);
        }
    }

    #[test]
    fn standard_normal_eps_is_scaled_identity() {
        let s = NoiseSchedule::rescaled_linear(100).unwrap();
        let w = GaussianMixtureWorld::standard_normal(3).unwrap();
        let x = [0.4, -1.2, 2.5];
        for t in [1, 20, 77, 100] {
            let eps = w.exact_noisy_eps(&x, t, &s).unwrap();
            let k = (1.0 - s.alpha_bar(t)).sqrt();
            for (e, xi) in eps.iter().zip(&x) {
                assert!((e - k * xi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_midpoint_is_a_coin_flip() {
        let p = two_blob().classifier_probs(&[0.0, 3.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn corruption_identities() {
        let x = vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0, -2.0, 0.25];
        let band = FrequencyBand::new(1, 3);
        let mut rng = stream(5);
        for kind in CorruptionKind::ALL {
            let op = CorruptionOperator::new(kind, 0.0, band);
            assert_eq!(op.apply(&x, &mut rng).unwrap(), x);
        }
        let shifted = CorruptionOperator::new(CorruptionKind::ConstantShift, 1.5, band)
            .apply(&x, &mut rng)
            .unwrap();
        for (a, b) in shifted.iter().zip(&x) {
            assert_eq!(a - b, 1.5);
        }
    }

    #[test]
    fn band_validation() {
        let x = vec![0.0; 8];
        let op = CorruptionOperator::new(CorruptionKind::LowFreqAdditive, 1.0, FrequencyBand::new(3, 6));
        assert!(matches!(op.apply(&x, &mut stream(0)), Err(Error::BandOutOfRange { .. })));
        let op = CorruptionOperator::new(CorruptionKind::SpectralBlur, 1.0, FrequencyBand::new(2, 2));
        assert!(op.apply(&x, &mut stream(0)).is_err());
        assert!("1..4".parse::<FrequencyBand>().unwrap() == FrequencyBand::new(1, 4));
        assert!("14".parse::<FrequencyBand>().is_err());
    }

    #[test]
    fn low_frequency_corruption_lives_below_cutoff() {
        let dim = 16;
        let mut rng = stream(9);
        let x0 = standard_normal_vec(&mut rng, dim);
        let op = CorruptionOperator::new(CorruptionKind::LowFreqAdditive, 2.0, FrequencyBand::new(1, 3));
        let y = op.apply(&x0, &mut rng).unwrap();
        let lp = LowPassFilter::new(3, dim).unwrap();
        let diff: Vec<f64> = y.iter().zip(&x0).map(|(a, b)| a - b).collect();
        let low: f64 = lp.apply(&diff).iter().map(|v| v * v).sum();
        let high: f64 = lp.highpass(&diff).iter().map(|v| v * v).sum();
        assert!(low > 1.0);
        assert!(high < 1e-20);
    }

    #[test]
    fn high_frequency_noise_is_band_limited() {
        let dim = 16;
        let mut rng = stream(2);
        let op = CorruptionOperator::new(CorruptionKind::HighFreqAdditive, 1.0, FrequencyBand::new(5, 9));
        let y = op.apply(&vec![0.0; dim], &mut rng).unwrap();
        let lp = LowPassFilter::new(5, dim).unwrap();
        assert!(lp.apply(&y).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn blur_shrinks_band_energy() {
        let dim = 16;
        let mut rng = stream(4);
        let x0 = standard_normal_vec(&mut rng, dim);
        let band = FrequencyBand::new(4, 9);
        let y = CorruptionOperator::new(CorruptionKind::SpectralBlur, 1.0, band)
            .apply(&x0, &mut rng)
            .unwrap();
        let s = Spectrum::new(dim);
        let before = s.band_project(&x0, 4, 9);
        let after = s.band_project(&y, 4, 9);
        for (a, b) in after.iter().zip(&before) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
        let low_before = s.band_project(&x0, 0, 4);
        let low_after = s.band_project(&y, 0, 4);
        for (a, b) in low_after.iter().zip(&low_before) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lowpass_basics() {
        let dim = 12;
        assert!(LowPassFilter::new(0, dim).is_err());
        assert!(LowPassFilter::new(13, dim).is_err());
        let x: Vec<f64> = (0..dim).map(|i| (i as f64).powi(2) * 0.1 - 1.0).collect();
        let id = LowPassFilter::new(dim, dim).unwrap();
        for (a, b) in id.apply(&x).iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = vec![3.25; dim];
        for d in 1..=dim {
            let out = LowPassFilter::new(d, dim).unwrap().apply(&c);
            assert!(out.iter().all(|v| (v - 3.25).abs() < 1e-12));
        }
        for k in 1..=dim / 2 {
            let wave: Vec<f64> = (0..dim)
                .map(|n| (2.0 * std::f64::consts::PI * (k * n) as f64 / dim as f64 + 0.3).cos())
                .collect();
            for d in 1..=k {
                let out = LowPassFilter::new(d, dim).unwrap().apply(&wave);
                assert!(out.iter().all(|v| v.abs() < 1e-10), "k={k} d={d}");
            }
        }
    }
}
