use ctquant::evaluation::{
    binomial_two_sided, bootstrap_ci, chi_square_continuity, confusion_metrics, evaluate, mcnemar_test, roc_auc,
    select_threshold, Confusion, MetricError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn labelled(n: usize, seed: u64, shift: f64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0 || rng.gen_bool(0.3)).collect();
    let scores = labels
        .iter()
        .map(|&l| rng.sample::<f64, _>(StandardNormal) + if l { shift } else { 0.0 })
        .collect();
    (scores, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_is_invariant_under_monotone_maps(
        raw in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 2..120),
        a in 0.01f64..50.0,
        b in -10.0f64..10.0,
    ) {
        let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse grid so ties occur.
        let scores: Vec<f64> = raw.iter().map(|r| (r.0 * 4.0).round() / 4.0).collect();
        let base = roc_auc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert!((roc_auc(&exp, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((roc_auc(&affine, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn mcnemar_p_is_a_probability_and_symmetric(
        outcomes in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..200),
    ) {
        let a: Vec<bool> = outcomes.iter().map(|o| o.0).collect();
        let b: Vec<bool> = outcomes.iter().map(|o| o.1).collect();
        let l: Vec<bool> = outcomes.iter().map(|o| o.2).collect();
        let ab = mcnemar_test(&a, &b, &l).unwrap();
        let ba = mcnemar_test(&b, &a, &l).unwrap();
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert_eq!((ab.b, ab.c), (ba.c, ba.b));
    }

    #[test]
    fn report_metrics_match_its_confusion_matrix(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..60).map(|_| rng.gen()).collect();
        let mut labels: Vec<bool> = scores.iter().map(|&s| rng.gen_bool(s)).collect();
        labels[0] = true;
        labels[1] = false;
        let r = evaluate(&scores, &labels, t, 50, seed).unwrap();
        let m = r.confusion.metrics();
        prop_assert_eq!(m.accuracy, r.accuracy.value);
        prop_assert_eq!(m.sensitivity, r.sensitivity.value);
        prop_assert_eq!(m.specificity, r.specificity.value);
        prop_assert_eq!(m.f1, r.f1.value);
        prop_assert_eq!(r.confusion, Confusion::at(&scores, &labels, t));
    }
}

#[test]
fn uninformative_scores_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..20_000).map(|_| rng.gen()).collect();
    let labels: Vec<bool> = (0..20_000).map(|_| rng.gen_bool(0.5)).collect();
    assert!((roc_auc(&scores, &labels).unwrap() - 0.5).abs() < 0.02);
}

#[test]
fn exact_and_chi_square_agree_near_the_switch() {
    for n in 20u64..=30 {
        for b in 0..=n {
            let d = (binomial_two_sided(b, n - b) - chi_square_continuity(b, n - b)).abs();
            assert!(d < 0.02, "b={b} c={}: {d}", n - b);
        }
    }
}

#[test]
fn extreme_thresholds_bound_sensitivity() {
    let (scores, labels) = labelled(80, 1, 1.0);
    let probs: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
    let lo = confusion_metrics(&probs, &labels, 0.0).unwrap();
    let hi = confusion_metrics(&probs, &labels, 1.0).unwrap();
    assert_eq!((lo.sensitivity, lo.specificity), (1.0, 0.0));
    assert_eq!((hi.sensitivity, hi.specificity), (0.0, 1.0));
    for t in [0.2, 0.5, 0.8] {
        let m = confusion_metrics(&probs, &labels, t).unwrap();
        assert!(hi.sensitivity <= m.sensitivity && m.sensitivity <= lo.sensitivity);
    }
}

#[test]
fn threshold_matches_exhaustive_sweep() {
    for seed in 0..20 {
        let (scores, labels) = labelled(150, seed, 1.2);
        let choice = select_threshold(&scores, &labels).unwrap();
        // Sweep every cut between sorted scores, evaluating the rule directly.
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let mut best = (f64::MIN, f64::MIN, 0.0);
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            let t = (w[0] + w[1]) / 2.0;
            let tp = scores.iter().zip(&labels).filter(|(s, l)| **l && **s >= t).count() as f64;
            let tn = scores.iter().zip(&labels).filter(|(s, l)| !**l && **s < t).count() as f64;
            let pos = labels.iter().filter(|l| **l).count() as f64;
            let (sens, spec) = (tp / pos, tn / (labels.len() as f64 - pos));
            let j = sens + spec - 1.0;
            if j > best.0 || (j == best.0 && spec > best.1) {
                best = (j, spec, t);
            }
        }
        assert_eq!(choice.youden, best.0, "seed {seed}");
        assert_eq!(choice.threshold, best.2, "seed {seed}");
    }
}

#[test]
fn doubling_n_narrows_auc_interval() {
    let width = |n: usize, trial: u64| {
        let (s, l) = labelled(n, 1000 + trial, 1.0);
        let ci = bootstrap_ci(roc_auc, &s, &l, 300, trial).unwrap();
        ci.hi - ci.lo
    };
    let small: f64 = (0..20).map(|t| width(100, t)).sum::<f64>() / 20.0;
    let large: f64 = (0..20).map(|t| width(200, t + 100)).sum::<f64>() / 20.0;
    assert!(large < small, "mean width {large} at 2n vs {small} at n");
}

#[test]
fn sparse_positives_flag_the_interval() {
    let mut labels = vec![false; 40];
    labels[3] = true;
    let scores: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let ci = bootstrap_ci(roc_auc, &scores, &labels, 400, 1).unwrap();
    assert!(ci.failed > 0 && ci.unreliable());
    let report = evaluate(&scores, &labels, 2.5, 400, 1).unwrap();
    assert!(report.unreliable.contains(&"auc".to_string()));
    assert_eq!(roc_auc(&scores, &[false; 40]), Err(MetricError::NoPositives));
}
