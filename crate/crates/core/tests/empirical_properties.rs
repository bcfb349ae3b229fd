//! Sampling, empirical losses and confidence adjustments.

mod common;

use common::{default_boxes, dot, instance, random_vec};
use minimax_interval::empirical::{
    bootstrap_interval, build_empirical_loss, deviation_term, rademacher_bound, rademacher_complexity,
    sample_dataset, tuple_loss, ConfidenceDetail, Dataset, RewardNoise,
};
use minimax_interval::interval::{unified_interval, LossMode};
use minimax_interval::saddle::build_exact_loss;
use minimax_interval::{Error, FunctionClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

// ── Sampling ──

#[test]
fn pair_and_transition_frequencies_match_their_distributions() {
    let inst = instance(1, 3, 2, 0.9);
    let n = 100_000;
    let ds = sample_dataset(&inst.mdp, &inst.mu, n, 2, RewardNoise::None).unwrap();
    let freq = ds.pair_frequencies();
    for (f, p) in freq.iter().zip(&inst.mu) {
        assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }
    // Next-state frequencies from pair (0, 0).
    let from: Vec<_> = ds.tuples().iter().filter(|t| t.s == 0 && t.a == 0).collect();
    let m = from.len() as f64;
    for (next, &p) in inst.mdp.next_state_probs(0, 0).iter().enumerate() {
        let f = from.iter().filter(|t| t.s_next == next).count() as f64 / m;
        assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / m).sqrt() + 1e-12);
    }
}

#[test]
fn exhaustive_dataset_reproduces_the_exact_loss() {
    let inst = instance(2, 4, 3, 0.9);
    let ds = Dataset::exhaustive(&inst.mdp, &inst.mu).unwrap();
    let emp = build_empirical_loss(&ds, &inst.policy).unwrap();
    let exact = build_exact_loss(&inst.mdp, &inst.policy, &inst.mu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let w = random_vec(&mut rng, 12, 0.0, 3.0);
        let q = random_vec(&mut rng, 12, -2.0, 2.0);
        assert!((emp.evaluate(&w, &q) - exact.evaluate(&w, &q)).abs() < 1e-10);
    }
}

#[test]
fn empirical_loss_obeys_the_central_limit_scale() {
    let inst = instance(4, 3, 2, 0.9);
    let n = 10_000;
    let ds = sample_dataset(&inst.mdp, &inst.mu, n, 5, RewardNoise::Uniform { width: 0.5 }).unwrap();
    let loss = build_empirical_loss(&ds, &inst.policy).unwrap();
    let exact = build_exact_loss(&inst.mdp, &inst.policy, &inst.mu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let w = random_vec(&mut rng, 6, 0.0, 4.0);
        let q = random_vec(&mut rng, 6, 0.0, 10.0);
        let terms: Vec<f64> = (0..n).map(|j| tuple_loss(&ds, &inst.policy, j, &w, &q)).collect();
        let mean = terms.iter().sum::<f64>() / n as f64;
        let sd = (terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!((mean - loss.evaluate(&w, &q)).abs() < 1e-9);
        assert!((mean - exact.evaluate(&w, &q)).abs() <= 4.0 * sd / (n as f64).sqrt());
    }
}

#[test]
fn dataset_file_round_trip() {
    let inst = instance(5, 3, 2, 0.9);
    let ds = sample_dataset(&inst.mdp, &inst.mu, 50, 7, RewardNoise::Uniform { width: 0.3 }).unwrap();
    let mut buf = Vec::new();
    ds.write_to(&mut buf).unwrap();
    let back = Dataset::read_from(buf.as_slice()).unwrap();
    assert_eq!(back.tuples(), ds.tuples());
    assert_eq!(back.weights(), ds.weights());
    assert_eq!(back.gamma(), ds.gamma());
    assert_eq!(back.initial(), ds.initial());
}

#[test]
fn raw_interval_converges_to_the_exact_interval() {
    let inst = instance(6, 3, 2, 0.9);
    let (q, w) = default_boxes(&inst, 0.6 * max(&inst.w_true));
    let exact = unified_interval(
        &build_exact_loss(&inst.mdp, &inst.policy, &inst.mu).unwrap(),
        &q,
        &w,
        LossMode::Exact,
    )
    .unwrap();
    let mut errors = Vec::new();
    for n in [100, 1_000, 10_000] {
        let mut total = 0.0;
        for rep in 0..5 {
            let ds = sample_dataset(&inst.mdp, &inst.mu, n, 100 + rep, RewardNoise::None).unwrap();
            let iv = unified_interval(&build_empirical_loss(&ds, &inst.policy).unwrap(), &q, &w, LossMode::Empirical)
                .unwrap();
            total += (iv.low - exact.low).abs().max((iv.high - exact.high).abs());
        }
        errors.push(total / 5.0);
    }
    assert!(errors[2] < errors[0], "{errors:?}");
    assert!(errors[2] < 0.1 * exact.length().max(1.0), "{errors:?}");
}

// ── Bootstrap ──

#[test]
fn single_resample_bootstrap_reports_that_resample() {
    let inst = instance(7, 3, 2, 0.9);
    let (q, w) = default_boxes(&inst, 0.6 * max(&inst.w_true));
    let ds = sample_dataset(&inst.mdp, &inst.mu, 100, 1, RewardNoise::None).unwrap();
    let rep = bootstrap_interval(&ds, &inst.policy, &q, &w, 1, 1, 9).unwrap();
    let ConfidenceDetail::Bootstrap { lows, highs } = &rep.detail else { panic!() };
    assert_eq!((rep.adjusted_low, rep.adjusted_high), (lows[0], highs[0]));
    assert!(matches!(
        bootstrap_interval(&ds, &inst.policy, &q, &w, 3, 4, 9),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn bootstrap_is_reproducible_and_orders_its_endpoints() {
    let inst = instance(8, 3, 2, 0.9);
    let (q, w) = default_boxes(&inst, 0.6 * max(&inst.w_true));
    let ds = sample_dataset(&inst.mdp, &inst.mu, 100, 1, RewardNoise::None).unwrap();
    let a = bootstrap_interval(&ds, &inst.policy, &q, &w, 10, 2, 4).unwrap();
    let b = bootstrap_interval(&ds, &inst.policy, &q, &w, 10, 2, 4).unwrap();
    assert_eq!(a, b);
    let ConfidenceDetail::Bootstrap { lows, highs } = &a.detail else { panic!() };
    let mut l = lows.clone();
    l.sort_by(f64::total_cmp);
    let mut h = highs.clone();
    h.sort_by(|x, y| y.total_cmp(x));
    assert_eq!(a.adjusted_low, l[1]);
    assert_eq!(a.adjusted_high, h[1]);
}

// ── Rademacher ──

#[test]
fn complexity_of_a_finite_class_matches_direct_sampling() {
    let inst = instance(9, 2, 2, 0.9);
    let ds = sample_dataset(&inst.mdp, &inst.mu, 30, 3, RewardNoise::None).unwrap();
    let w0 = inst.w_true.clone();
    let members = vec![inst.q_true.clone(), inst.q_true.iter().map(|v| v * 0.5).collect(), vec![1.0; 4]];
    let q = FunctionClass::finite(members.clone()).unwrap();
    let w = FunctionClass::singleton(w0.clone());
    let (est, se) = rademacher_complexity(&ds, &inst.policy, &q, &w, 4000, 11).unwrap();

    let n = ds.len();
    let per_member: Vec<Vec<f64>> = members
        .iter()
        .map(|m| (0..n).map(|j| ds.weights()[j] * tuple_loss(&ds, &inst.policy, j, &w0, m)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let sigma: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let best = per_member.iter().map(|l| dot(&sigma, l)).fold(f64::NEG_INFINITY, f64::max);
        sum += best;
        sq += best * best;
    }
    let mean = sum / draws as f64;
    let oracle_se = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    assert!(mean > 0.0);
    assert!((est - mean).abs() <= 4.0 * (se + oracle_se), "{est} vs {mean}");
}

#[test]
fn rademacher_adjustment_widens_and_shrinks_with_more_data() {
    let inst = instance(10, 2, 2, 0.9);
    let (q, w) = default_boxes(&inst, 0.6 * max(&inst.w_true));
    let mut addends = Vec::new();
    for n in [100, 1_000, 10_000] {
        let ds = sample_dataset(&inst.mdp, &inst.mu, n, 1, RewardNoise::None).unwrap();
        let rep = rademacher_bound(&ds, &inst.policy, &q, &w, 0.05, 20, 3).unwrap();
        assert!(rep.adjusted_low <= rep.raw.low && rep.adjusted_high >= rep.raw.high);
        let ConfidenceDetail::Rademacher { addend, complexity, .. } = rep.detail else { panic!() };
        assert!(complexity >= 0.0);
        addends.push(addend);
    }
    assert!(addends.windows(2).all(|p| p[1] < p[0]), "{addends:?}");
    assert!(deviation_term(1.0, 0.05, 400) * 2.0 - deviation_term(1.0, 0.05, 100) < 1e-12);
}
