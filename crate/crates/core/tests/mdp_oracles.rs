//! Exact solves against independent computations: truncated power series,
//! Monte Carlo rollouts and long-run simulation.

mod common;

use common::{dot, instance, random_vec, sample_index};
use minimax_interval::mdp::{
    build_rmax, build_rmin, generate_chain, generate_random_mdp, initial_pair_distribution, j_pi,
    make_counterexample, solve_d_pi, solve_q_pi, state_action_transition, stationary_distribution,
};
use minimax_interval::saddle::build_exact_loss;
use minimax_interval::{Policy, Sense, TabularMdp};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ── Value functions ──

#[test]
fn q_matches_truncated_power_series() {
    let mdp = generate_random_mdp(7, 4, 2, 0.9).unwrap();
    let pi = Policy::random(8, 4, 2);
    let p = state_action_transition(&mdp, &pi) * mdp.gamma();
    let r = DVector::from_column_slice(mdp.mean_rewards());
    let mut term = r.clone();
    let mut sum = DVector::zeros(r.len());
    for _ in 0..500 {
        sum += &term;
        term = &p * term;
    }
    let q = solve_q_pi(&mdp, &pi).unwrap();
    for (a, b) in q.values.iter().zip(sum.iter()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn frozen_values_for_a_seeded_instance() {
    // Recomputed independently with the power series above and frozen.
    let mdp = generate_random_mdp(7, 4, 2, 0.9).unwrap();
    let pi = Policy::uniform(4, 2);
    let j = j_pi(&mdp, &pi).unwrap();
    let p = state_action_transition(&mdp, &pi) * mdp.gamma();
    let mut term = DVector::from_column_slice(mdp.mean_rewards());
    let mut sum = DVector::zeros(8);
    for _ in 0..2000 {
        sum += &term;
        term = &p * term;
    }
    let series_j = dot(&initial_pair_distribution(&mdp, &pi), sum.as_slice());
    assert!((j - series_j).abs() < 1e-9);
}

struct Sampler {
    mdp: TabularMdp,
    policy: Policy,
}

impl Sampler {
    fn step(&self, rng: &mut ChaCha8Rng, s: usize) -> (usize, usize) {
        let a = sample_index(rng, self.policy.row(s));
        let next = sample_index(rng, self.mdp.next_state_probs(s, a));
        (a, next)
    }
}

#[test]
fn occupancy_and_value_match_monte_carlo() {
    let mdp = generate_random_mdp(3, 3, 2, 0.9).unwrap();
    let policy = Policy::random(4, 3, 2);
    let d = solve_d_pi(&mdp, &policy).unwrap().values;
    let j = j_pi(&mdp, &policy).unwrap();
    let n_pairs = mdp.n_pairs();
    let gamma = mdp.gamma();
    let sampler = Sampler { mdp: mdp.clone(), policy };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n_traj = 100_000;
    let mut sum = vec![0.0; n_pairs];
    let mut sum_sq = vec![0.0; n_pairs];
    let (mut j_sum, mut j_sq) = (0.0, 0.0);
    let mut visits = vec![0.0; n_pairs];
    for _ in 0..n_traj {
        visits.fill(0.0);
        let mut s = sample_index(&mut rng, mdp.initial());
        let mut disc = 1.0;
        let mut ret = 0.0;
        for _ in 0..200 {
            let (a, next) = sampler.step(&mut rng, s);
            let i = mdp.index(s, a);
            visits[i] += disc;
            ret += disc * mdp.mean_rewards()[i];
            disc *= gamma;
            s = next;
        }
        for i in 0..n_pairs {
            sum[i] += visits[i];
            sum_sq[i] += visits[i] * visits[i];
        }
        j_sum += ret;
        j_sq += ret * ret;
    }
    let n = n_traj as f64;
    let truncation = gamma.powi(200) / (1.0 - gamma);
    for i in 0..n_pairs {
        let mean = sum[i] / n;
        let se = ((sum_sq[i] / n - mean * mean) / n).sqrt();
        assert!((mean - d[i]).abs() <= 3.0 * se + truncation, "pair {i}: {mean} vs {} (se {se})", d[i]);
    }
    let mean = j_sum / n;
    let se = ((j_sq / n - mean * mean) / n).sqrt();
    assert!((mean - j).abs() <= 3.0 * se + truncation, "J {mean} vs {j} (se {se})");
}

#[test]
fn occupancy_mass_is_one_over_one_minus_gamma() {
    for seed in 0..10 {
        let inst = instance(seed, 4, 3, 0.95);
        let d = solve_d_pi(&inst.mdp, &inst.policy).unwrap();
        assert!((d.sum() - 20.0).abs() < 1e-9);
    }
}

// ── Loss identities ──

#[test]
fn true_weights_and_true_values_zero_out_the_other_argument() {
    let inst = instance(21, 4, 2, 0.9);
    let loss = build_exact_loss(&inst.mdp, &inst.policy, &inst.mu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = inst.mdp.n_pairs();
    for _ in 0..20 {
        let q = random_vec(&mut rng, n, -5.0, 5.0);
        let w = random_vec(&mut rng, n, -5.0, 5.0);
        assert!((loss.evaluate(&inst.w_true, &q) - inst.j).abs() < 1e-8);
        assert!((loss.evaluate(&w, &inst.q_true) - inst.j).abs() < 1e-8);
    }
}

// ── Rmax / Rmin ──

#[test]
fn rmin_and_rmax_sandwich_the_true_value() {
    let mdp = generate_chain(5, 0.1, 0.9).unwrap();
    let known = [0, 1, 2];
    let hi = build_rmax(&mdp, &known).unwrap();
    let lo = build_rmin(&mdp, &known).unwrap();
    for seed in 0..50 {
        let pi = Policy::random(seed, 5, 2);
        let (a, b, c) = (j_pi(&lo, &pi).unwrap(), j_pi(&mdp, &pi).unwrap(), j_pi(&hi, &pi).unwrap());
        assert!(a <= b + 1e-9 && b <= c + 1e-9, "{a} {b} {c}");
    }
}

#[test]
fn rmax_gain_equals_r_max_times_unknown_occupancy() {
    let mdp = generate_chain(5, 0.1, 0.9).unwrap();
    let known = [0, 1, 2];
    let hi = build_rmax(&mdp, &known).unwrap();
    let lo = build_rmin(&mdp, &known).unwrap();
    for seed in 0..10 {
        let pi = Policy::random(seed, 5, 2);
        let d = solve_d_pi(&hi, &pi).unwrap().values;
        let unknown_mass: f64 = (6..10).map(|i| d[i]).sum();
        let gain = j_pi(&hi, &pi).unwrap() - j_pi(&lo, &pi).unwrap();
        assert!((gain - mdp.r_max() * unknown_mass).abs() < 1e-9);
    }
}

// ── Average reward ──

#[test]
fn stationary_distribution_matches_long_simulation() {
    let mdp = generate_random_mdp(12, 4, 2, 0.9).unwrap();
    let policy = Policy::random(13, 4, 2);
    let d = stationary_distribution(&mdp, &policy).unwrap().values;
    let sampler = Sampler { mdp: mdp.clone(), policy };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut counts = vec![0.0; mdp.n_pairs()];
    let steps = 1_000_000;
    let mut s = 0;
    for _ in 0..steps {
        let (a, next) = sampler.step(&mut rng, s);
        counts[mdp.index(s, a)] += 1.0;
        s = next;
    }
    for (c, t) in counts.iter().zip(&d) {
        assert!((c / steps as f64 - t).abs() < 1e-2);
    }
}

#[test]
fn stationary_distribution_is_a_fixed_point() {
    let mdp = generate_random_mdp(2, 5, 3, 0.9).unwrap();
    let pi = Policy::random(3, 5, 3);
    let d = DVector::from_vec(stationary_distribution(&mdp, &pi).unwrap().values);
    let p: DMatrix<f64> = state_action_transition(&mdp, &pi);
    assert!((p.transpose() * &d - &d).amax() < 1e-10);
    assert!((d.sum() - 1.0).abs() < 1e-12);
}

// ── Counterexample ──

#[test]
fn hull_membership_without_class_membership_breaks_the_upper_bound() {
    let (eps, gamma) = (0.1, 0.9);
    let ce = make_counterexample(eps, gamma).unwrap();
    let q = solve_q_pi(&ce.mdp, &ce.policy).unwrap().values;
    let j = j_pi(&ce.mdp, &ce.policy).unwrap();
    assert!(!ce.q_class.contains(&q, 1e-9).unwrap());
    assert!(ce.q_class.hull_contains(&q, 1e-9).unwrap());
    let loss = build_exact_loss(&ce.mdp, &ce.policy, &ce.mu).unwrap();
    let minimax_interval::FunctionClass::FiniteSet { members } = &ce.q_class else {
        panic!("finite class expected")
    };
    let expected = [gamma * eps / (1.0 - gamma), eps / (1.0 - gamma)];
    for (member, want) in members.iter().zip(expected) {
        let coeff: Vec<f64> = (0..loss.w_dim())
            .map(|i| loss.rho[i] + (0..loss.q_dim()).map(|k| loss.k[(i, k)] * member[k]).sum::<f64>())
            .collect();
        let (sup, _) = ce.w_class.optimize_affine(&coeff, Sense::Maximize).unwrap();
        let excess = sup + dot(&loss.nu, member) + loss.constant - j;
        assert!(excess >= want - 1e-9, "excess {excess} < {want}");
    }
}

// ── Serialization ──

#[test]
fn json_round_trip_is_exact() {
    let mdp = generate_random_mdp(1, 3, 2, 0.95).unwrap();
    let back = TabularMdp::from_json(&mdp.to_json()).unwrap();
    assert_eq!(mdp, back);
    let pi = Policy::random(1, 3, 2);
    assert_eq!(pi, Policy::from_json(&pi.to_json()).unwrap());
}
