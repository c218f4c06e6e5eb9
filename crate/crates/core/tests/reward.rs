use fkdiff::models::GaussianMixtureWorld;
use fkdiff::reward::{
    anneal_alpha, build_candidate_set, candidate_log_mass, gt_reward, renormalized_entropy, restricted_entropy,
    steering_reward, CandidateSet, EntropyMode, GroundTruthReward, PseudoLabelReward, RewardFn, RewardGradient,
    RewardSchedule, RewardSpec,
};
use fkdiff::rng::substream;
use proptest::prelude::*;
use rand::Rng;

fn world() -> GaussianMixtureWorld {
    GaussianMixtureWorld::isotropic(
        vec![vec![1.5, 0.0, 0.5], vec![-1.5, 0.5, 0.0], vec![0.0, -1.5, 1.0], vec![0.5, 1.0, -1.5]],
        1.0,
    )
    .unwrap()
}

fn probs_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 2..12).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn candidate_set_is_the_shortest_top_prefix(probs in probs_strategy(), threshold in 1.0f64..100.0) {
        let c = build_candidate_set(&probs, threshold).unwrap();
        let target = threshold / 100.0;
        let mass: f64 = c.labels().iter().map(|&y| probs[y]).sum();
        prop_assert!((mass - c.cumulative_mass()).abs() < 1e-12);
        prop_assert!(mass >= target - 1e-12);
        let without_last: f64 = c.labels()[..c.len() - 1].iter().map(|&y| probs[y]).sum();
        prop_assert!(without_last < target - 1e-12);
        // Every member outranks every non-member.
        let floor = c.labels().iter().map(|&y| probs[y]).fold(f64::INFINITY, f64::min);
        for (y, p) in probs.iter().enumerate() {
            if !c.contains(y) {
                prop_assert!(*p <= floor);
            }
        }
    }

    #[test]
    fn log_mass_matches_direct_sum(probs in probs_strategy(), threshold in 1.0f64..100.0) {
        let c = build_candidate_set(&probs, threshold).unwrap();
        let direct: f64 = c.labels().iter().map(|&y| probs[y]).sum::<f64>().ln();
        prop_assert!((candidate_log_mass(&probs, &c) - direct).abs() < 1e-12);
    }
}

#[test]
fn candidate_set_examples() {
    let c = build_candidate_set(&[0.1, 0.6, 0.3], 70.0).unwrap();
    assert_eq!(c.labels(), &[1, 2]);
    let tie = build_candidate_set(&[0.25; 4], 50.0).unwrap();
    assert_eq!(tie.labels(), &[0, 1]);
    assert_eq!(build_candidate_set(&[0.2, 0.8], 100.0).unwrap().len(), 2);
    assert!(build_candidate_set(&[0.2, 0.7], 70.0).is_err());
    assert!(build_candidate_set(&[], 70.0).is_err());
    assert_eq!(CandidateSet::all(3).labels(), &[0, 1, 2]);
}

#[test]
fn annealing_weight_runs_from_one_to_zero() {
    assert_eq!(anneal_alpha(50, 50).unwrap(), 0.0);
    assert_eq!(anneal_alpha(0, 50).unwrap(), 1.0);
    assert!((anneal_alpha(25, 50).unwrap() - 0.5).abs() < 1e-15);
    assert!(anneal_alpha(51, 50).is_err());
    let s = RewardSchedule::new(50).unwrap();
    let a: Vec<f64> = (0..=50).map(|t| s.alpha(t).unwrap()).collect();
    assert!(a.windows(2).all(|w| w[1] < w[0]));
    assert!(RewardSchedule::new(0).is_err());
}

#[test]
fn entropies_on_a_two_label_set() {
    let probs = [0.5, 0.25, 0.25];
    let c = build_candidate_set(&probs, 70.0).unwrap();
    assert_eq!(c.labels(), &[0, 1]);
    let raw = -(0.5 * 0.5f64.ln() + 0.25 * 0.25f64.ln());
    assert!((restricted_entropy(&probs, &c) - raw).abs() < 1e-15);
    let q: [f64; 2] = [2.0 / 3.0, 1.0 / 3.0];
    let renorm = -(q[0] * q[0].ln() + q[1] * q[1].ln());
    assert!((renormalized_entropy(&probs, &c) - renorm).abs() < 1e-15);
}

#[test]
fn reward_endpoints() {
    let w = world();
    let spec = RewardSpec::new(70.0, 50).unwrap();
    let mut rng = substream(1, &[]);
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let probs = w.classifier_probs(&x);
        let c = build_candidate_set(&probs, 70.0).unwrap();
        let at_n = steering_reward(&x, 50, &c, &spec, &w).unwrap();
        let at_0 = steering_reward(&x, 0, &c, &spec, &w).unwrap();
        assert!((at_n - candidate_log_mass(&probs, &c)).abs() < 1e-12);
        assert!((at_0 + restricted_entropy(&probs, &c)).abs() < 1e-12);
        let mid = steering_reward(&x, 20, &c, &spec, &w).unwrap();
        assert!((mid - (0.4 * at_n + 0.6 * at_0)).abs() < 1e-12);
        // The full label set has log mass zero.
        let all = steering_reward(&x, 50, &CandidateSet::all(4), &spec, &w).unwrap();
        assert!(all.abs() < 1e-12);
    }
    assert!(steering_reward(&[0.0; 3], 51, &CandidateSet::all(4), &spec, &w).is_err());
    assert!(RewardSpec::new(0.0, 50).is_err());
    assert!(RewardSpec::new(100.5, 50).is_err());
}

#[test]
fn ground_truth_reward() {
    let w = GaussianMixtureWorld::isotropic(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0).unwrap();
    let mid = gt_reward(&[0.0, 2.0], 1, &w).unwrap();
    assert!((mid - 0.5f64.ln()).abs() < 1e-15);
    let x = [0.3, -0.7];
    for y in 0..2 {
        assert!((gt_reward(&x, y, &w).unwrap() - w.classifier_probs(&x)[y].ln()).abs() < 1e-12);
        let r = GroundTruthReward::new(&w, y).unwrap();
        assert_eq!(r.reward(&x, 7), gt_reward(&x, y, &w).unwrap());
    }
    assert!(gt_reward(&x, 2, &w).is_err());
    assert!(GroundTruthReward::new(&w, 2).is_err());
}

fn check_gradient(r: &dyn RewardGradient, x: &[f64], t: usize) {
    let h = 1e-6;
    let g = r.gradient(x, t);
    for j in 0..x.len() {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += h;
        xm[j] -= h;
        let fd = (r.reward(&xp, t) - r.reward(&xm, t)) / (2.0 * h);
        assert!((g[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "t = {t}, j = {j}: {} vs {fd}", g[j]);
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let w = world();
    let mut rng = substream(2, &[]);
    for entropy in [EntropyMode::Raw, EntropyMode::Renormalized] {
        let spec = RewardSpec::new(70.0, 50).unwrap().with_entropy(entropy);
        for _ in 0..10 {
            let x0: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = PseudoLabelReward::for_input(&w, &x0, spec).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            for t in [0, 13, 50] {
                check_gradient(&r, &x, t);
            }
        }
    }
    for y in 0..4 {
        check_gradient(&GroundTruthReward::new(&w, y).unwrap(), &[0.2, -0.4, 1.1], 0);
    }
}

#[test]
fn pseudo_label_reward_uses_the_corrupted_input_set() {
    let w = world();
    let x0 = [1.4, 0.1, 0.4];
    let spec = RewardSpec::new(70.0, 50).unwrap();
    let r = PseudoLabelReward::for_input(&w, &x0, spec).unwrap();
    let c = build_candidate_set(&w.classifier_probs(&x0), 70.0).unwrap();
    assert_eq!(r.candidate_set(), &c);
    let x = [-0.3, 0.8, 0.2];
    for t in [0, 10, 50] {
        assert_eq!(r.reward(&x, t), steering_reward(&x, t, &c, &spec, &w).unwrap());
    }
    // Steps past the range are scored as the exploration end.
    assert_eq!(r.reward(&x, 80), r.reward(&x, 50));
}
