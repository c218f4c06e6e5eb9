use fkdiff::config::ExperimentConfig;
use fkdiff::harness::{
    adapt, compare_distributions, predict_ensemble, rejection_sample_tilted, run_experiment, AdaptationMethod,
    MethodKind, RunMetrics,
};
use fkdiff::models::{CorruptionKind, GaussianMixtureWorld};
use fkdiff::par::ExecMode;
use fkdiff::rng::{substream, tag, Stream};
use fkdiff::stats::{mean, variance};
use rand::Rng;
use rand_distr::StandardNormal;

fn gauss(rng: &mut Stream) -> Vec<f64> {
    vec![rng.sample::<f64, _>(StandardNormal)]
}

/// Mean of `phi(x) exp(lambda f(x))` by the trapezoid rule on [-12, 12].
fn tilted_mean(f: impl Fn(f64) -> f64, lambda: f64) -> f64 {
    let n = 200_000;
    let h = 24.0 / n as f64;
    let (mut z, mut m) = (0.0, 0.0);
    for i in 0..=n {
        let x = -12.0 + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 } * (-0.5 * x * x + lambda * f(x)).exp();
        z += w;
        m += w * x;
    }
    m / z
}

#[test]
fn rejection_sampler_hits_the_tilted_mean() {
    let lambda = 1.5;
    let reward = |x: &[f64], _: usize| x[0].min(0.0);
    let mut rng = substream(1, &[]);
    let xs: Vec<f64> = rejection_sample_tilted(gauss, &reward, lambda, 0.0, 100_000, &mut rng)
        .unwrap()
        .into_iter()
        .map(|v| v[0])
        .collect();
    let want = tilted_mean(|x| x.min(0.0), lambda);
    let se = (variance(&xs) / xs.len() as f64).sqrt();
    assert!((mean(&xs) - want).abs() < 4.0 * se, "{} vs {want}", mean(&xs));
}

#[test]
fn quadratic_tilt_halves_the_variance() {
    let reward = |x: &[f64], _: usize| -0.5 * x[0] * x[0];
    let mut rng = substream(2, &[]);
    let xs: Vec<f64> = rejection_sample_tilted(gauss, &reward, 1.0, 0.0, 100_000, &mut rng)
        .unwrap()
        .into_iter()
        .map(|v| v[0])
        .collect();
    assert!(mean(&xs).abs() < 0.01);
    assert!((variance(&xs) - 0.5).abs() < 0.01, "{}", variance(&xs));
}

#[test]
fn rejection_sampler_rejects_a_bad_bound() {
    let reward = |x: &[f64], _: usize| x[0];
    let mut rng = substream(3, &[]);
    assert!(rejection_sample_tilted(gauss, &reward, 1.0, 0.0, 10, &mut rng).is_err());
}

#[test]
fn divergence_between_shifted_normals() {
    let mut rng = substream(4, &[]);
    let a: Vec<Vec<f64>> = (0..10_000).map(|_| gauss(&mut rng)).collect();
    let b: Vec<Vec<f64>> = (0..10_000).map(|_| vec![1.0 + gauss(&mut rng)[0]]).collect();
    let reward = |x: &[f64], _: usize| 2.0 * x[0];
    let r = compare_distributions(&a, &b, Some(&reward)).unwrap();
    assert!((r.mean_diff[0] - 1.0).abs() < 0.05);
    assert!(r.var_diff[0].abs() < 0.08);
    // sup |Phi(x) - Phi(x - 1)| = 2 Phi(1/2) - 1.
    assert!((r.ks_coords[0] - 0.382_924_922_548_026).abs() < 0.03, "{}", r.ks_coords[0]);
    assert!((r.ks_reward.unwrap() - r.ks_coords[0]).abs() < 1e-12);
    let same = compare_distributions(&a, &a, None).unwrap();
    assert_eq!(same.max_ks(), 0.0);
    assert!(compare_distributions(&a, &[], None).is_err());
    assert!(compare_distributions(&a, &[vec![0.0, 1.0]], None).is_err());
}

#[test]
fn ensemble_prediction_averages_probabilities() {
    // Means at -1/2 and 1/2 with unit variance give p(1 | x) = sigmoid(x).
    let w = GaussianMixtureWorld::isotropic(vec![vec![-0.5], vec![0.5]], 1.0).unwrap();
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let (a, b) = ([logit(0.4)], [logit(0.8)]);
    assert!((w.classifier_probs(&a)[1] - 0.4).abs() < 1e-12);
    assert_eq!(w.predict(&a), 0);
    assert_eq!(predict_ensemble(&a, &b, &w), 1);
    assert_eq!(predict_ensemble(&[0.0], &[0.0], &w), 0);
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::parse_str(
        "experiment.n = 12\nexperiment.seed = 5\nexperiment.corruptions = low_freq_additive:0, constant_shift:0, \
         spectral_blur:4\n",
    )
    .unwrap()
}

#[test]
fn method_dispatch() {
    let config = small_config();
    let exp = config.build(ExecMode::Sequential).unwrap();
    let x0 = vec![0.3; exp.world.dim()];
    let method = |kind| AdaptationMethod {
        kind,
        steering: exp.steering.clone(),
        reward: exp.reward,
        grad_scale: exp.grad_scale,
    };
    let none = adapt(&x0, &method(MethodKind::None), None, &exp.world, &exp.schedule, 1).unwrap();
    assert_eq!(none.x, x0);
    assert!(adapt(&x0, &method(MethodKind::SteeringGt), None, &exp.world, &exp.schedule, 1).is_err());
    let gt = adapt(&x0, &method(MethodKind::SteeringGt), Some(2), &exp.world, &exp.schedule, 1).unwrap();
    assert_eq!(gt.history.unwrap().len(), exp.steering.steps);
    for kind in [MethodKind::PureDiffusion, MethodKind::GradGuided, MethodKind::Steering] {
        let a = adapt(&x0, &method(kind), None, &exp.world, &exp.schedule, 1).unwrap();
        let b = adapt(&x0, &method(kind), None, &exp.world, &exp.schedule, 1).unwrap();
        assert_eq!(a.x, b.x, "{kind}");
        assert_ne!(a.x, x0, "{kind}");
    }
    assert!(adapt(&[0.0; 3], &method(MethodKind::None), None, &exp.world, &exp.schedule, 1).is_err());
}

#[test]
fn uncorrupted_cells_report_clean_bayes_accuracy() {
    let mut config = small_config();
    config.methods = vec![MethodKind::None, MethodKind::Steering];
    let exp = config.build(ExecMode::Parallel).unwrap();
    let metrics = run_experiment(&exp).unwrap();
    let clean = (0..12)
        .filter(|&s| {
            let (x, y) = exp.world.sample(&mut substream(5, &[tag::SAMPLE, s]));
            exp.world.predict(&x) == y
        })
        .count() as f64
        / 12.0;
    for c in metrics.cells.iter().filter(|c| c.severity == 0) {
        assert_eq!(c.acc_baseline, clean, "{} {}", c.kind, c.method);
        if c.method == MethodKind::None {
            assert_eq!((c.acc_adapted, c.acc_ensemble), (clean, clean));
        }
    }
    assert_eq!(metrics.cells.len(), 3 * 2);
    let blur: Vec<_> = metrics.cells.iter().filter(|c| c.kind == CorruptionKind::SpectralBlur).collect();
    assert_eq!(blur[0].acc_baseline, blur[1].acc_baseline);
}

fn lines(m: &RunMetrics) -> Vec<String> {
    m.to_csv().lines().map(str::to_string).collect()
}

#[test]
fn experiment_is_reproducible_and_exec_independent() {
    let mut config = small_config();
    config.methods = vec![MethodKind::PureDiffusion, MethodKind::GradGuided, MethodKind::Steering];
    config.diagnostics = true;
    let a = run_experiment(&config.build(ExecMode::Parallel).unwrap()).unwrap();
    let b = run_experiment(&config.build(ExecMode::Sequential).unwrap()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.diagnostics_csv(), b.diagnostics_csv());
    let rows = lines(&a);
    assert_eq!(rows[0], RunMetrics::CSV_HEADER);
    assert_eq!(rows.len(), 1 + 3 * 3);
    assert!(rows[1..].iter().all(|r| r.ends_with(",12,5")));
    // Only the steering method keeps per-step records.
    assert_eq!(a.diagnostics.len(), 3 * 12 * config.range);
    assert!(a.diagnostics.iter().all(|d| d.method == MethodKind::Steering));

    config.seed = 6;
    let c = run_experiment(&config.build(ExecMode::Parallel).unwrap()).unwrap();
    assert_ne!(a.config_digest, c.config_digest);
}

#[test]
fn empty_experiment_has_no_cells() {
    let mut config = small_config();
    config.samples_per_cell = 0;
    let m = run_experiment(&config.build(ExecMode::Sequential).unwrap()).unwrap();
    assert!(m.cells.is_empty());
    assert_eq!(lines(&m), vec![RunMetrics::CSV_HEADER.to_string()]);
    assert_eq!(m.summary.len(), config.methods.len());
    assert!(m.summary.iter().all(|s| s.avg_ensemble.is_none()));
    assert_eq!(m.average_baseline(), None);
}

#[test]
fn method_names_round_trip() {
    for m in MethodKind::ALL {
        assert_eq!(m.as_str().parse::<MethodKind>().unwrap(), m);
    }
    assert!("steer".parse::<MethodKind>().is_err());
}
