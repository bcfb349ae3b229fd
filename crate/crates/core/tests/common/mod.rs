#![allow(dead_code)]

use minimax_interval::mdp::{generate_random_mdp, importance_weights_for, solve_d_pi, uniform_distribution};
use minimax_interval::{FunctionClass, Policy, TabularMdp};
use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub mu: Vec<f64>,
    pub q_true: Vec<f64>,
    pub w_true: Vec<f64>,
    pub j: f64,
}

pub fn instance(seed: u64, ns: usize, na: usize, gamma: f64) -> Instance {
    let mdp = generate_random_mdp(seed, ns, na, gamma).unwrap();
    let policy = Policy::random(seed + 1000, ns, na);
    let mu = uniform_distribution(mdp.n_pairs());
    let q_true = minimax_interval::mdp::solve_q_pi(&mdp, &policy).unwrap().values;
    let d = solve_d_pi(&mdp, &policy).unwrap();
    let w_true = importance_weights_for(&mdp, &d.values, &mu).unwrap().values;
    let j = minimax_interval::mdp::j_pi(&mdp, &policy).unwrap();
    Instance { mdp, policy, mu, q_true, w_true, j }
}

/// Value box `[0, 1/(1-gamma)]` and weight box `[0, cap]`.
pub fn default_boxes(inst: &Instance, w_cap: f64) -> (FunctionClass, FunctionClass) {
    let n = inst.mdp.n_pairs();
    let g = inst.mdp.gamma();
    (
        FunctionClass::uniform_box(n, 0.0, 1.0 / (1.0 - g)).unwrap(),
        FunctionClass::uniform_box(n, 0.0, w_cap).unwrap(),
    )
}

pub fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    WeightedIndex::new(probs).unwrap().sample(rng)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
