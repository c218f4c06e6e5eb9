//! Flat `section.key = value` experiment config.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown and duplicate keys are rejected. Parsing materializes every
//! default, so [`ExperimentConfig::to_text`] always lists every key and
//! reparses to an equal value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::harness::{CorruptionCell, Experiment, MethodKind};
use crate::models::{CorruptionKind, CorruptionOperator, FrequencyBand, GaussianMixtureWorld, LowPassFilter, WorldLayout};
use crate::par::ExecMode;
use crate::reward::{EntropyMode, RewardSpec};
use crate::schedule::NoiseSchedule;
use crate::smc::{calibrate_guidance_weight, ProposalKind, SteeringConfig};
use crate::{Error, Result};

pub const KEYS: &[&str] = &[
    "world.dim",
    "world.classes",
    "world.min_separation",
    "world.variance",
    "world.mean_scale",
    "world.layout_seed",
    "schedule.T",
    "schedule.beta_min",
    "schedule.beta_max",
    "schedule.N",
    "steering.K",
    "steering.lambda",
    "steering.resample_check_period",
    "steering.ess_fraction",
    "steering.guidance_weight",
    "steering.filter_D",
    "steering.proposal",
    "reward.P",
    "reward.entropy",
    "grad.scale",
    "corruption.low_freq_band",
    "corruption.high_freq_band",
    "corruption.blur_band",
    "corruption.low_freq_unit",
    "corruption.high_freq_unit",
    "corruption.blur_unit",
    "corruption.shift_unit",
    "experiment.methods",
    "experiment.corruptions",
    "experiment.n",
    "experiment.seed",
    "output.dir",
    "output.diagnostics",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world: WorldLayout,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub range: usize,
    pub particles: usize,
    pub lambda: f64,
    pub resample_check_period: usize,
    pub ess_fraction: f64,
    pub guidance_weight: f64,
    pub filter_cutoff: usize,
    pub proposal: ProposalKind,
    pub threshold_percent: f64,
    pub entropy: EntropyMode,
    pub grad_scale: f64,
    pub low_freq_band: FrequencyBand,
    pub high_freq_band: FrequencyBand,
    pub blur_band: FrequencyBand,
    pub low_freq_unit: f64,
    pub high_freq_unit: f64,
    pub blur_unit: f64,
    pub shift_unit: f64,
    pub methods: Vec<MethodKind>,
    /// (kind, severity level 0..=5) cells.
    pub corruptions: Vec<(CorruptionKind, u32)>,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub diagnostics: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_pairs(BTreeMap::new()).expect("defaults are valid")
    }
}

struct Resolver {
    raw: BTreeMap<String, String>,
}

impl Resolver {
    fn get<T: FromStr>(&self, key: &str, default: impl FnOnce() -> T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw.get(key) {
            None => Ok(default()),
            Some(v) => v
                .parse::<T>()
                .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: impl FnOnce() -> Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw.get(key) {
            None => Ok(default()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>().map_err(|e| Error::config(key, format!("cannot parse `{s}`: {e}"))))
                .collect(),
        }
    }
}

fn ensure(ok: bool, key: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

fn parse_cell(s: &str) -> std::result::Result<(CorruptionKind, u32), String> {
    let (kind, level) = s.split_once(':').ok_or_else(|| format!("expected `kind:level`, got `{s}`"))?;
    let level = level.trim().parse::<u32>().map_err(|e| format!("severity `{level}`: {e}"))?;
    Ok((kind.trim().parse()?, level))
}

/// Weather sits inside the guided band; noise and blur cover everything the
/// low-pass filter discards.
fn default_bands(dim: usize, cutoff: usize) -> (FrequencyBand, FrequencyBand, FrequencyBand) {
    let m = dim / 2;
    let quarter = (m / 4).max(1);
    let above = FrequencyBand::new(cutoff.min(m), m + 1);
    (FrequencyBand::new(1, 1 + quarter), above, above)
}

pub fn default_corruptions() -> Vec<(CorruptionKind, u32)> {
    CorruptionKind::ALL
        .into_iter()
        .flat_map(|k| (1..=5).map(move |l| (k, l)))
        .collect()
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if raw.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::config(key, "duplicate key"));
            }
        }
        Self::from_pairs(raw)
    }

    pub fn parse_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse_str(&text)
    }

    fn from_pairs(raw: BTreeMap<String, String>) -> Result<Self> {
        let r = Resolver { raw };
        let base = WorldLayout::default();
        let world = WorldLayout {
            dim: r.get("world.dim", || base.dim)?,
            classes: r.get("world.classes", || base.classes)?,
            min_separation: r.get("world.min_separation", || base.min_separation)?,
            variance: r.get("world.variance", || base.variance)?,
            mean_scale: r.get("world.mean_scale", || base.mean_scale)?,
            layout_seed: r.get("world.layout_seed", || base.layout_seed)?,
        };
        ensure(world.dim >= 1, "world.dim", "must be at least 1")?;
        ensure(world.classes >= 2, "world.classes", "must be at least 2")?;
        ensure(world.min_separation >= 0.0, "world.min_separation", "must be >= 0")?;
        ensure(world.variance > 0.0, "world.variance", "must be > 0")?;
        ensure(world.mean_scale > 0.0, "world.mean_scale", "must be > 0")?;

        let steps: usize = r.get("schedule.T", || 100)?;
        ensure(steps >= 1, "schedule.T", "must be at least 1")?;
        let (lo, hi) = NoiseSchedule::default_bounds(steps);
        let beta_min: f64 = r.get("schedule.beta_min", || lo)?;
        let beta_max: f64 = r.get("schedule.beta_max", || hi)?;
        ensure(beta_min > 0.0 && beta_min < 1.0, "schedule.beta_min", "must lie in (0, 1)")?;
        ensure(beta_max >= beta_min && beta_max < 1.0, "schedule.beta_max", "must lie in [beta_min, 1)")?;
        let schedule = NoiseSchedule::linear(steps, beta_min, beta_max)
            .map_err(|e| Error::config("schedule.beta_max", e.to_string()))?;
        let range: usize = r.get("schedule.N", || 50.min(steps))?;
        ensure(range >= 1 && range <= steps, "schedule.N", format!("must lie in 1..={steps}"))?;

        let particles: usize = r.get("steering.K", || 4)?;
        ensure(particles >= 1, "steering.K", "must be at least 1")?;
        let lambda: f64 = r.get("steering.lambda", || 1.0)?;
        ensure(lambda >= 0.0 && lambda.is_finite(), "steering.lambda", "must be finite and >= 0")?;
        let resample_check_period: usize = r.get("steering.resample_check_period", || 5)?;
        ensure(resample_check_period >= 1, "steering.resample_check_period", "must be at least 1")?;
        let ess_fraction: f64 = r.get("steering.ess_fraction", || 0.5)?;
        ensure(ess_fraction > 0.0 && ess_fraction <= 1.0, "steering.ess_fraction", "must lie in (0, 1]")?;
        let guidance_weight: f64 =
            r.get("steering.guidance_weight", || calibrate_guidance_weight(&schedule, range))?;
        ensure(
            guidance_weight >= 0.0 && guidance_weight.is_finite(),
            "steering.guidance_weight",
            "must be finite and >= 0",
        )?;
        let filter_cutoff: usize = r.get("steering.filter_D", || (world.dim / 4).max(1))?;
        ensure(
            filter_cutoff >= 1 && filter_cutoff <= world.dim,
            "steering.filter_D",
            format!("must lie in 1..={}", world.dim),
        )?;
        let proposal: ProposalKind = r.get("steering.proposal", ProposalKind::default)?;

        let threshold_percent: f64 = r.get("reward.P", || 70.0)?;
        ensure(threshold_percent > 0.0 && threshold_percent <= 100.0, "reward.P", "must lie in (0, 100]")?;
        let entropy: EntropyMode = r.get("reward.entropy", EntropyMode::default)?;
        let grad_scale: f64 = r.get("grad.scale", || 1.0)?;
        ensure(grad_scale >= 0.0 && grad_scale.is_finite(), "grad.scale", "must be finite and >= 0")?;

        let (low, high, blur) = default_bands(world.dim, filter_cutoff);
        let low_freq_band: FrequencyBand = r.get("corruption.low_freq_band", || low)?;
        let high_freq_band: FrequencyBand = r.get("corruption.high_freq_band", || high)?;
        let blur_band: FrequencyBand = r.get("corruption.blur_band", || blur)?;
        // Units are calibrated on the no-adaptation classifier alone, so that
        // severity 5 costs every kind a comparable share of accuracy.
        let low_freq_unit: f64 = r.get("corruption.low_freq_unit", || 0.7)?;
        let high_freq_unit: f64 = r.get("corruption.high_freq_unit", || 0.8)?;
        let blur_unit: f64 = r.get("corruption.blur_unit", || 4.5)?;
        let shift_unit: f64 = r.get("corruption.shift_unit", || 0.8)?;
        for (key, v) in [
            ("corruption.low_freq_unit", low_freq_unit),
            ("corruption.high_freq_unit", high_freq_unit),
            ("corruption.blur_unit", blur_unit),
            ("corruption.shift_unit", shift_unit),
        ] {
            ensure(v >= 0.0 && v.is_finite(), key, "must be finite and >= 0")?;
        }

        let methods: Vec<MethodKind> = r.list("experiment.methods", || MethodKind::ALL.to_vec())?;
        ensure(!methods.is_empty(), "experiment.methods", "at least one method is required")?;
        let corruptions = match r.raw.get("experiment.corruptions") {
            None => default_corruptions(),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_cell(s).map_err(|e| Error::config("experiment.corruptions", e)))
                .collect::<Result<Vec<_>>>()?,
        };
        for &(kind, level) in &corruptions {
            ensure(level <= 5, "experiment.corruptions", format!("severity {level} exceeds 5"))?;
            let (key, band) = match kind {
                CorruptionKind::LowFreqAdditive => ("corruption.low_freq_band", low_freq_band),
                CorruptionKind::HighFreqAdditive => ("corruption.high_freq_band", high_freq_band),
                CorruptionKind::SpectralBlur => ("corruption.blur_band", blur_band),
                CorruptionKind::ConstantShift => continue,
            };
            band.validate(world.dim).map_err(|e| Error::config(key, e.to_string()))?;
        }
        let samples_per_cell: usize = r.get("experiment.n", || 500)?;
        let seed: u64 = r.get("experiment.seed", || 0)?;
        let output_dir: PathBuf = r.get("output.dir", || PathBuf::from("out"))?;
        let diagnostics: bool = r.get("output.diagnostics", || false)?;

        Ok(Self {
            world,
            steps,
            beta_min,
            beta_max,
            range,
            particles,
            lambda,
            resample_check_period,
            ess_fraction,
            guidance_weight,
            filter_cutoff,
            proposal,
            threshold_percent,
            entropy,
            grad_scale,
            low_freq_band,
            high_freq_band,
            blur_band,
            low_freq_unit,
            high_freq_unit,
            blur_unit,
            shift_unit,
            methods,
            corruptions,
            samples_per_cell,
            seed,
            output_dir,
            diagnostics,
        })
    }

    /// Every key in [`KEYS`] order, one per line.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let values: Vec<String> = vec![
            self.world.dim.to_string(),
            self.world.classes.to_string(),
            self.world.min_separation.to_string(),
            self.world.variance.to_string(),
            self.world.mean_scale.to_string(),
            self.world.layout_seed.to_string(),
            self.steps.to_string(),
            self.beta_min.to_string(),
            self.beta_max.to_string(),
            self.range.to_string(),
            self.particles.to_string(),
            self.lambda.to_string(),
            self.resample_check_period.to_string(),
            self.ess_fraction.to_string(),
            self.guidance_weight.to_string(),
            self.filter_cutoff.to_string(),
            self.proposal.to_string(),
            self.threshold_percent.to_string(),
            self.entropy.to_string(),
            self.grad_scale.to_string(),
            self.low_freq_band.to_string(),
            self.high_freq_band.to_string(),
            self.blur_band.to_string(),
            self.low_freq_unit.to_string(),
            self.high_freq_unit.to_string(),
            self.blur_unit.to_string(),
            self.shift_unit.to_string(),
            join(self.methods.iter().map(ToString::to_string).collect()),
            join(self.corruptions.iter().map(|(k, l)| format!("{k}:{l}")).collect()),
            self.samples_per_cell.to_string(),
            self.seed.to_string(),
            self.output_dir.display().to_string(),
            self.diagnostics.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`to_text`](Self::to_text).
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_text().as_bytes());
        hex::encode(hash)[..16].to_string()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }

    pub fn steering_config(&self, schedule: &NoiseSchedule) -> Result<SteeringConfig> {
        let config = SteeringConfig {
            particles: self.particles,
            steps: self.range,
            lambda: self.lambda,
            resample_check_period: self.resample_check_period,
            ess_fraction: self.ess_fraction,
            guidance_weight: self.guidance_weight,
            filter: LowPassFilter::new(self.filter_cutoff, self.world.dim)?,
            proposal: self.proposal,
            exec: ExecMode::Sequential,
        };
        config.validate(schedule)?;
        Ok(config)
    }

    pub fn corruption_operator(&self, kind: CorruptionKind, level: u32) -> CorruptionOperator {
        let (unit, band) = match kind {
            CorruptionKind::LowFreqAdditive => (self.low_freq_unit, self.low_freq_band),
            CorruptionKind::HighFreqAdditive => (self.high_freq_unit, self.high_freq_band),
            CorruptionKind::SpectralBlur => (self.blur_unit, self.blur_band),
            CorruptionKind::ConstantShift => (self.shift_unit, FrequencyBand::new(0, 1)),
        };
        CorruptionOperator::at_level(kind, level, unit, band)
    }

    pub fn build(&self, exec: ExecMode) -> Result<Experiment> {
        let schedule = self.schedule()?;
        Ok(Experiment {
            world: GaussianMixtureWorld::from_layout(&self.world)?,
            steering: self.steering_config(&schedule)?,
            reward: RewardSpec::new(self.threshold_percent, self.range)?.with_entropy(self.entropy),
            schedule,
            grad_scale: self.grad_scale,
            methods: self.methods.clone(),
            cells: self
                .corruptions
                .iter()
                .map(|&(kind, level)| CorruptionCell {
                    level,
                    operator: self.corruption_operator(kind, level),
                })
                .collect(),
            samples_per_cell: self.samples_per_cell,
            seed: self.seed,
            config_digest: self.digest(),
            exec,
            diagnostics: self.diagnostics,
        })
    }
}
