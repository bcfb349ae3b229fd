//! Finite discounted MDPs and the exact quantities defined on them: action
//! values, discounted occupancies, marginalized importance weights,
//! stationary distributions, and the Rmax / Rmin constructions.
//!
//! State-action pairs are flattened as `s * n_actions + a` everywhere in the
//! crate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classes::FunctionClass;
use crate::error::{Error, Result};

/// Row-sum tolerance for transition and policy rows.
pub const ROW_SUM_TOL: f64 = 1e-12;

const FORMAT_VERSION: u32 = 1;

// ── Types ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']` flattened.
    transition: Vec<f64>,
    /// `R(s,a)` flattened.
    mean_reward: Vec<f64>,
    r_max: f64,
    gamma: f64,
    /// Initial state distribution.
    initial: Vec<f64>,
}

/// Stochastic policy `pi(a|s)`, one row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorRole {
    QFunction,
    WFunction,
    Occupancy,
    Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionVector {
    pub role: VectorRole,
    pub values: Vec<f64>,
}

impl StateActionVector {
    pub fn new(role: VectorRole, values: Vec<f64>) -> Self {
        Self { role, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl std::ops::Index<usize> for StateActionVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

// ── Construction ────────────────────────────────────────────────────────

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        mean_reward: Vec<f64>,
        r_max: f64,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            mean_reward,
            r_max,
            gamma,
            initial,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Average-reward MDPs allow `gamma = 1`; nothing else changes.
    pub fn new_average_reward(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        mean_reward: Vec<f64>,
        r_max: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            mean_reward,
            r_max,
            gamma: 1.0,
            initial,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if self.transition.len() != ns * na * ns {
            return Err(Error::DimensionMismatch {
                expected: ns * na * ns,
                got: self.transition.len(),
            });
        }
        if self.mean_reward.len() != ns * na {
            return Err(Error::DimensionMismatch {
                expected: ns * na,
                got: self.mean_reward.len(),
            });
        }
        if self.initial.len() != ns {
            return Err(Error::DimensionMismatch {
                expected: ns,
                got: self.initial.len(),
            });
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidMdp(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.r_max >= 0.0 && self.r_max.is_finite()) {
            return Err(Error::InvalidMdp(format!("r_max {} must be finite and >= 0", self.r_max)));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.next_state_probs(s, a);
                if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                    return Err(Error::InvalidMdp(format!("negative transition at ({s},{a})")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "P[{s}][{a}] sums to {total}, not 1"
                    )));
                }
                let r = self.reward(s, a);
                if !(0.0..=self.r_max).contains(&r) {
                    return Err(Error::InvalidMdp(format!(
                        "reward {r} at ({s},{a}) outside [0, {}]",
                        self.r_max
                    )));
                }
            }
        }
        if self.initial.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidMdp("negative initial probability".into()));
        }
        let total: f64 = self.initial.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidMdp(format!("initial distribution sums to {total}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of state-action pairs.
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn mean_rewards(&self) -> &[f64] {
        &self.mean_reward
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.mean_reward[self.index(s, a)]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Same dynamics with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut m = self.clone();
        m.gamma = gamma;
        m.validate()?;
        Ok(m)
    }

    /// Same dynamics with a different initial distribution.
    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        m.initial = initial;
        m.validate()?;
        Ok(m)
    }

    fn require_discounted(&self) -> Result<()> {
        if self.gamma >= 1.0 {
            return Err(Error::SingularSystem);
        }
        Ok(())
    }
}

impl Policy {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidPolicy("empty policy".into()));
        }
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rows.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch {
                    expected: n_actions,
                    got: row.len(),
                });
            }
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!("negative probability in state {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
            probs.extend(row);
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// One-hot rows, `actions[s]` chosen in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidPolicy(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::from_rows(probs.chunks(n_actions).map(<[f64]>::to_vec).collect())
    }

    /// Every deterministic policy, in lexicographic order of the action
    /// vector with state 0 as the most significant digit.
    pub fn all_deterministic(n_states: usize, n_actions: usize) -> Vec<Policy> {
        let total = n_actions.pow(n_states as u32);
        (0..total)
            .map(|mut code| {
                let mut actions = vec![0; n_states];
                for s in (0..n_states).rev() {
                    actions[s] = code % n_actions;
                    code /= n_actions;
                }
                Self::deterministic(&actions, n_actions).expect("in-range actions")
            })
            .collect()
    }

    /// Softmax-like random policy with full support, deterministic in seed.
    pub fn random(seed: u64, n_states: usize, n_actions: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n_states)
            .map(|_| dirichlet_row(&mut rng, n_actions))
            .collect();
        Self::from_rows(rows).expect("normalized rows")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.probs.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }

    /// `q(s, pi) = sum_a pi(a|s) q(s,a)`.
    pub fn state_value(&self, q: &[f64], s: usize) -> f64 {
        self.row(s)
            .iter()
            .zip(&q[s * self.n_actions..(s + 1) * self.n_actions])
            .map(|(p, v)| p * v)
            .sum()
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::InvalidPolicy(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Exp(1) draws normalized: a flat Dirichlet sample.
    let draws: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-12)
        .collect();
    let total: f64 = draws.iter().sum();
    let mut row: Vec<f64> = draws.iter().map(|d| d / total).collect();
    // Push the rounding residue into the largest entry so rows sum to 1.
    let residue = 1.0 - row.iter().sum::<f64>();
    let big = (0..n)
        .max_by(|&i, &j| row[i].total_cmp(&row[j]))
        .unwrap_or(0);
    row[big] += residue;
    row
}

// ── Exact evaluation ────────────────────────────────────────────────────

/// State-action transition matrix under `policy`:
/// `(s,a) -> (s',a')` with probability `P(s'|s,a) pi(a'|s')`.
pub fn state_action_transition(mdp: &TabularMdp, policy: &Policy) -> DMatrix<f64> {
    let n = mdp.n_pairs();
    let na = mdp.n_actions;
    let mut m = DMatrix::zeros(n, n);
    for s in 0..mdp.n_states {
        for a in 0..na {
            let row = mdp.index(s, a);
            for (next, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    m[(row, next * na + a2)] += p * policy.prob(next, a2);
                }
            }
        }
    }
    m
}

/// `nu(s,a) = d0(s) pi(a|s)`: the coefficient vector of `q(s0, pi)`.
pub fn initial_pair_distribution(mdp: &TabularMdp, policy: &Policy) -> Vec<f64> {
    let mut nu = vec![0.0; mdp.n_pairs()];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            nu[mdp.index(s, a)] = mdp.initial[s] * policy.prob(s, a);
        }
    }
    nu
}

fn solve_dense(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let sol = m.clone().lu().solve(rhs).ok_or(Error::SingularSystem)?;
    let residual = (&m * &sol - rhs).amax();
    let scale = 1.0_f64.max(sol.amax());
    if residual > 1e-9 * scale {
        return Err(Error::Invariant(format!("linear solve residual {residual:e}")));
    }
    Ok(sol)
}

/// `Q^pi` from the Bellman equation `Q = R + gamma P^pi Q` by a direct dense
/// solve.
pub fn solve_q_pi(mdp: &TabularMdp, policy: &Policy) -> Result<StateActionVector> {
    policy.check_shape(mdp)?;
    mdp.require_discounted()?;
    let n = mdp.n_pairs();
    let p = state_action_transition(mdp, policy);
    let system = DMatrix::identity(n, n) - p * mdp.gamma;
    let rhs = DVector::from_column_slice(&mdp.mean_reward);
    let q = solve_dense(system, &rhs)?;
    Ok(StateActionVector::new(VectorRole::QFunction, q.iter().copied().collect()))
}

/// Unnormalized discounted occupancy `d^pi`, total mass `1/(1-gamma)`.
pub fn solve_d_pi(mdp: &TabularMdp, policy: &Policy) -> Result<StateActionVector> {
    policy.check_shape(mdp)?;
    mdp.require_discounted()?;
    let n = mdp.n_pairs();
    let p = state_action_transition(mdp, policy);
    let system = DMatrix::identity(n, n) - p.transpose() * mdp.gamma;
    let nu = DVector::from_vec(initial_pair_distribution(mdp, policy));
    let d = solve_dense(system, &nu)?;
    let d: Vec<f64> = d.iter().map(|v| v.max(0.0)).collect();
    let mass: f64 = d.iter().sum();
    let expected = 1.0 / (1.0 - mdp.gamma);
    if (mass - expected).abs() > 1e-9 * expected {
        return Err(Error::Invariant(format!(
            "occupancy mass {mass} differs from {expected}"
        )));
    }
    Ok(StateActionVector::new(VectorRole::Occupancy, d))
}

/// `J(pi) = Q^pi(s0, pi)`, cross-checked against `E_{d^pi}[r]`.
pub fn j_pi(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    let q = solve_q_pi(mdp, policy)?;
    let d = solve_d_pi(mdp, policy)?;
    let nu = initial_pair_distribution(mdp, policy);
    let via_q: f64 = nu.iter().zip(&q.values).map(|(a, b)| a * b).sum();
    let via_d: f64 = d.values.iter().zip(&mdp.mean_reward).map(|(a, b)| a * b).sum();
    if (via_q - via_d).abs() > 1e-9 * 1.0_f64.max(via_q.abs()) {
        return Err(Error::Invariant(format!(
            "Q-route value {via_q} and occupancy-route value {via_d} disagree"
        )));
    }
    Ok(via_q)
}

/// `w(s,a) = d^pi(s,a) / mu(s,a)`, zero where both vanish.
pub fn importance_weights(d_pi: &StateActionVector, mu: &StateActionVector) -> Result<StateActionVector> {
    importance_weights_raw(&d_pi.values, &mu.values, None)
}

/// Same as [`importance_weights`] with the action count used to report
/// offending `(s,a)` pairs.
pub fn importance_weights_for(
    mdp: &TabularMdp,
    d_pi: &[f64],
    mu: &[f64],
) -> Result<StateActionVector> {
    importance_weights_raw(d_pi, mu, Some(mdp.n_actions))
}

fn importance_weights_raw(d: &[f64], mu: &[f64], n_actions: Option<usize>) -> Result<StateActionVector> {
    if d.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            got: mu.len(),
        });
    }
    let total: f64 = mu.iter().sum();
    if mu.iter().any(|m| *m < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("mu must be a distribution".into()));
    }
    let mut bad = Vec::new();
    let w = d
        .iter()
        .zip(mu)
        .enumerate()
        .map(|(i, (&dv, &mv))| {
            if mv > 0.0 {
                dv / mv
            } else {
                if dv > 1e-15 {
                    let na = n_actions.unwrap_or(1);
                    bad.push((i / na, i % na));
                }
                0.0
            }
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::UnsupportedOccupancy { pairs: bad });
    }
    Ok(StateActionVector::new(VectorRole::WFunction, w))
}

/// Normalized discounted occupancy of a behavior policy, a natural data
/// distribution `mu`.
pub fn behavior_distribution(mdp: &TabularMdp, behavior: &Policy) -> Result<Vec<f64>> {
    let d = solve_d_pi(mdp, behavior)?;
    let scale = 1.0 - mdp.gamma;
    Ok(d.values.iter().map(|v| v * scale).collect())
}

pub fn uniform_distribution(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

// ── Rmax / Rmin ─────────────────────────────────────────────────────────

fn build_optimistic(mdp: &TabularMdp, known_states: &[usize], unknown_reward: f64) -> Result<TabularMdp> {
    let ns = mdp.n_states;
    let mut known = vec![false; ns];
    for &s in known_states {
        if s >= ns {
            return Err(Error::InvalidArgument(format!("known state {s} out of range")));
        }
        known[s] = true;
    }
    if mdp.initial.iter().enumerate().any(|(s, &p)| p > 0.0 && !known[s]) {
        return Err(Error::InvalidArgument("initial state must be known".into()));
    }
    let mut out = mdp.clone();
    for s in (0..ns).filter(|&s| !known[s]) {
        for a in 0..mdp.n_actions {
            let start = (s * mdp.n_actions + a) * ns;
            out.transition[start..start + ns].fill(0.0);
            out.transition[start + s] = 1.0;
            out.mean_reward[s * mdp.n_actions + a] = unknown_reward;
        }
    }
    Ok(out)
}

/// Unknown states become absorbing self-loops paying `r_max`.
pub fn build_rmax(mdp: &TabularMdp, known_states: &[usize]) -> Result<TabularMdp> {
    build_optimistic(mdp, known_states, mdp.r_max)
}

/// Unknown states become absorbing self-loops paying nothing.
pub fn build_rmin(mdp: &TabularMdp, known_states: &[usize]) -> Result<TabularMdp> {
    build_optimistic(mdp, known_states, 0.0)
}

// ── Average reward ──────────────────────────────────────────────────────

/// State transition matrix `P^pi(s'|s)`.
pub fn state_transition(mdp: &TabularMdp, policy: &Policy) -> DMatrix<f64> {
    let ns = mdp.n_states;
    let mut m = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..mdp.n_actions {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (next, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                m[(s, next)] += pa * p;
            }
        }
    }
    m
}

/// Stationary state-action distribution of the chain induced by `policy`.
/// Requires a unique stationary state distribution with strictly positive
/// entries.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &Policy) -> Result<StateActionVector> {
    policy.check_shape(mdp)?;
    let ns = mdp.n_states;
    let p = state_transition(mdp, policy);
    // (P^T - I) d = 0 with the last equation replaced by sum(d) = 1.
    let mut system = p.transpose() - DMatrix::identity(ns, ns);
    for j in 0..ns {
        system[(ns - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(ns);
    rhs[ns - 1] = 1.0;
    let lu = system.clone().lu();
    let u = lu.u();
    let min_pivot = (0..ns).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-9 {
        return Err(Error::NonErgodicChain("stationary distribution is not unique".into()));
    }
    let d = lu.solve(&rhs).ok_or_else(|| Error::NonErgodicChain("singular chain".into()))?;
    if let Some(s) = (0..ns).find(|&s| d[s] <= 1e-9) {
        return Err(Error::NonErgodicChain(format!(
            "state {s} has stationary mass {:e}",
            d[s]
        )));
    }
    let residual = (p.transpose() * &d - &d).amax();
    if residual > 1e-9 {
        return Err(Error::NonErgodicChain(format!("balance residual {residual:e}")));
    }
    let mut out = vec![0.0; mdp.n_pairs()];
    for s in 0..ns {
        for a in 0..mdp.n_actions {
            out[mdp.index(s, a)] = d[s] * policy.prob(s, a);
        }
    }
    Ok(StateActionVector::new(VectorRole::Distribution, out))
}

/// Average reward `J = E_{d^pi}[r]` and the differential action values
/// `Q(s,a) = R(s,a) - J + E[Q(s',pi)]`, centered so `E_{d^pi}[Q] = 0`.
pub fn solve_differential_q(mdp: &TabularMdp, policy: &Policy) -> Result<(f64, StateActionVector)> {
    let d = stationary_distribution(mdp, policy)?;
    let j: f64 = d.values.iter().zip(&mdp.mean_reward).map(|(a, b)| a * b).sum();
    let n = mdp.n_pairs();
    let p = state_action_transition(mdp, policy);
    let dv = DVector::from_column_slice(&d.values);
    // (I - P + 1 d^T) Q = R - J 1 is nonsingular for an ergodic chain.
    let system = DMatrix::identity(n, n) - p + DVector::from_element(n, 1.0) * dv.transpose();
    let rhs = DVector::from_iterator(n, mdp.mean_reward.iter().map(|r| r - j));
    let q = solve_dense(system, &rhs)?;
    Ok((j, StateActionVector::new(VectorRole::QFunction, q.iter().copied().collect())))
}

// ── Generators ──────────────────────────────────────────────────────────

/// Random MDP with flat-Dirichlet transition rows, rewards uniform in
/// `[0, 1]`, `r_max = 1`, and state 0 as the initial state.
pub fn generate_random_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidArgument("sizes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(dirichlet_row(&mut rng, n_states));
    }
    let mean_reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let mut initial = vec![0.0; n_states];
    initial[0] = 1.0;
    TabularMdp::new(n_states, n_actions, transition, mean_reward, 1.0, gamma, initial)
}

/// A left/right chain. Action 0 moves left, action 1 moves right, and with
/// probability `slip_prob` the move goes the other way; the ends clamp. The
/// last state pays 1, state 0 pays 0.2, the rest pay nothing. Starts in
/// state 0. A chain of length one is a single absorbing state.
pub fn generate_chain(length: usize, slip_prob: f64, gamma: f64) -> Result<TabularMdp> {
    if length == 0 {
        return Err(Error::InvalidArgument("chain length must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&slip_prob) {
        return Err(Error::InvalidArgument(format!("slip probability {slip_prob}")));
    }
    let (ns, na) = (length, 2);
    let mut transition = vec![0.0; ns * na * ns];
    let mut mean_reward = vec![0.0; ns * na];
    for s in 0..ns {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(ns - 1);
        for a in 0..na {
            let (intended, other) = if a == 0 { (left, right) } else { (right, left) };
            let base = (s * na + a) * ns;
            transition[base + intended] += 1.0 - slip_prob;
            transition[base + other] += slip_prob;
            mean_reward[s * na + a] = if s == ns - 1 {
                1.0
            } else if s == 0 {
                0.2
            } else {
                0.0
            };
        }
    }
    let mut initial = vec![0.0; ns];
    initial[0] = 1.0;
    TabularMdp::new(ns, na, transition, mean_reward, 1.0, gamma, initial)
}

/// One state, one action, reward `reward`, `r_max = max(1, reward)`.
pub fn single_state_mdp(reward: f64, gamma: f64) -> Result<TabularMdp> {
    TabularMdp::new(1, 1, vec![1.0], vec![reward], reward.max(1.0), gamma, vec![1.0])
}

// ── Non-convex counterexample ───────────────────────────────────────────

/// The three-state instance where `Q^pi` lies in the convex hull of a
/// two-member value class but not in the class itself.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub mu: Vec<f64>,
    pub q_class: FunctionClass,
    pub w_class: FunctionClass,
    pub epsilon: f64,
}

/// Deterministic 3-state / 2-action MDP: `s0 -a1-> s1 -a1-> s2`, `a0`
/// self-loops in `s0` and `s1`, `s2` absorbing. Reward 1 only at `(s0,a0)`.
/// Uniform target policy and uniform data distribution. The value class is
/// `{Q^pi + eps 1[s=s1], Q^pi - eps 1[s=s1]}` and the weight class is the
/// normalized nonnegative polytope `{w >= 0 : E_mu[w] = 1/(1-gamma)}`.
pub fn make_counterexample(epsilon: f64, gamma: f64) -> Result<Counterexample> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
    }
    let (ns, na) = (3, 2);
    let arcs = [[0, 1], [1, 2], [2, 2]];
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            transition[(s * na + a) * ns + arcs[s][a]] = 1.0;
        }
    }
    let mut mean_reward = vec![0.0; ns * na];
    mean_reward[0] = 1.0;
    let mdp = TabularMdp::new(ns, na, transition, mean_reward, 1.0, gamma, vec![1.0, 0.0, 0.0])?;
    let policy = Policy::uniform(ns, na);
    let q = solve_q_pi(&mdp, &policy)?;
    let shift = |sign: f64| -> Vec<f64> {
        q.values
            .iter()
            .enumerate()
            .map(|(i, v)| if i / na == 1 { v + sign * epsilon } else { *v })
            .collect()
    };
    let mu = uniform_distribution(ns * na);
    let q_class = FunctionClass::finite(vec![shift(1.0), shift(-1.0)])?;
    let w_class = FunctionClass::normalized_nonnegative(&mu, 1.0 / (1.0 - gamma))?;
    Ok(Counterexample {
        mdp,
        policy,
        mu,
        q_class,
        w_class,
        epsilon,
    })
}

// ── File format ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    State(usize),
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    format: String,
    version: u32,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    initial: InitialSpec,
    transition: Vec<Vec<Vec<f64>>>,
    mean_reward: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDocument {
    format: String,
    version: u32,
    n_states: usize,
    n_actions: usize,
    action_probs: Vec<Vec<f64>>,
}

impl TabularMdp {
    pub fn to_json(&self) -> String {
        let (ns, na) = (self.n_states, self.n_actions);
        let initial = match self.initial.iter().position(|p| *p == 1.0) {
            Some(s) => InitialSpec::State(s),
            None => InitialSpec::Distribution(self.initial.clone()),
        };
        let doc = MdpDocument {
            format: "mvi-mdp".into(),
            version: FORMAT_VERSION,
            n_states: ns,
            n_actions: na,
            gamma: self.gamma,
            r_max: self.r_max,
            initial,
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.next_state_probs(s, a).to_vec()).collect())
                .collect(),
            mean_reward: self.mean_reward.chunks(na).map(<[f64]>::to_vec).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        if doc.format != "mvi-mdp" || doc.version != FORMAT_VERSION {
            return Err(Error::InvalidMdp(format!(
                "unsupported document {} v{}",
                doc.format, doc.version
            )));
        }
        let initial = match doc.initial {
            InitialSpec::State(s) => {
                if s >= doc.n_states {
                    return Err(Error::InvalidMdp(format!("initial state {s} out of range")));
                }
                let mut v = vec![0.0; doc.n_states];
                v[s] = 1.0;
                v
            }
            InitialSpec::Distribution(v) => v,
        };
        if doc.transition.len() != doc.n_states || doc.mean_reward.len() != doc.n_states {
            return Err(Error::DimensionMismatch {
                expected: doc.n_states,
                got: doc.transition.len().min(doc.mean_reward.len()),
            });
        }
        let transition = doc.transition.into_iter().flatten().flatten().collect();
        let mean_reward = doc.mean_reward.into_iter().flatten().collect();
        let mdp = Self {
            n_states: doc.n_states,
            n_actions: doc.n_actions,
            transition,
            mean_reward,
            r_max: doc.r_max,
            gamma: doc.gamma,
            initial,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

impl Policy {
    pub fn to_json(&self) -> String {
        let doc = PolicyDocument {
            format: "mvi-policy".into(),
            version: FORMAT_VERSION,
            n_states: self.n_states,
            n_actions: self.n_actions,
            action_probs: self.rows(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        if doc.format != "mvi-policy" || doc.version != FORMAT_VERSION {
            return Err(Error::InvalidPolicy(format!(
                "unsupported document {} v{}",
                doc.format, doc.version
            )));
        }
        let p = Self::from_rows(doc.action_probs)?;
        if p.n_states != doc.n_states || p.n_actions != doc.n_actions {
            return Err(Error::InvalidPolicy("declared shape does not match rows".into()));
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state_value_is_geometric_sum() {
        let mdp = single_state_mdp(1.0, 0.5).unwrap();
        let pi = Policy::uniform(1, 1);
        assert!((solve_q_pi(&mdp, &pi).unwrap()[0] - 2.0).abs() < 1e-12);
        assert!((solve_d_pi(&mdp, &pi).unwrap()[0] - 2.0).abs() < 1e-12);
        assert!((j_pi(&mdp, &pi).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn off_policy_action_gets_no_occupancy() {
        // One state, two actions, reward 1 everywhere; pi always takes a0.
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 1.0], 1.0, 0.5, vec![1.0]).unwrap();
        let pi = Policy::deterministic(&[0], 2).unwrap();
        let d = solve_d_pi(&mdp, &pi).unwrap();
        assert!((d[0] - 2.0).abs() < 1e-12);
        assert!(d[1].abs() < 1e-12);
        assert!((j_pi(&mdp, &pi).unwrap() - 2.0).abs() < 1e-12);
        let mu = StateActionVector::new(VectorRole::Distribution, vec![0.5, 0.5]);
        let w = importance_weights(&d, &mu).unwrap();
        assert!((w[0] - 4.0).abs() < 1e-12 && w[1] == 0.0);
    }

    #[test]
    fn self_ratio_weights_are_constant() {
        let mdp = generate_random_mdp(3, 3, 2, 0.8).unwrap();
        let pi = Policy::random(4, 3, 2);
        let d = solve_d_pi(&mdp, &pi).unwrap();
        let mass = d.sum();
        let mu = StateActionVector::new(
            VectorRole::Distribution,
            d.values.iter().map(|v| v / mass).collect(),
        );
        let w = importance_weights(&d, &mu).unwrap();
        for v in &w.values {
            assert!((v - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unsupported_occupancy_is_reported() {
        let mdp = generate_chain(3, 0.0, 0.9).unwrap();
        let pi = Policy::deterministic(&[1, 1, 1], 2).unwrap();
        let d = solve_d_pi(&mdp, &pi).unwrap();
        // Data only on state 0.
        let mu = vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0];
        match importance_weights_for(&mdp, &d.values, &mu) {
            Err(Error::UnsupportedOccupancy { pairs }) => {
                assert_eq!(pairs, vec![(1, 1), (2, 1)]);
            }
            other => panic!("expected UnsupportedOccupancy, got {other:?}"),
        }
    }

    #[test]
    fn rmax_with_everything_known_is_identity() {
        let mdp = generate_random_mdp(1, 4, 2, 0.9).unwrap();
        let all: Vec<usize> = (0..4).collect();
        assert_eq!(build_rmax(&mdp, &all).unwrap(), mdp);
        assert_eq!(build_rmin(&mdp, &all).unwrap(), mdp);
    }

    #[test]
    fn unknown_absorbing_state_under_rmax() {
        let mdp = generate_chain(2, 0.0, 0.9).unwrap();
        let rmax = build_rmax(&mdp, &[0]).unwrap();
        let pi = Policy::uniform(2, 2);
        let q = solve_q_pi(&rmax, &pi).unwrap();
        assert!((q[2] - 10.0).abs() < 1e-9);
        assert!((q[3] - 10.0).abs() < 1e-9);
        assert!(build_rmax(&mdp, &[1]).is_err());
    }

    #[test]
    fn stationary_distribution_cases() {
        let mdp = TabularMdp::new_average_reward(1, 1, vec![1.0], vec![1.0], 1.0, vec![1.0]).unwrap();
        let d = stationary_distribution(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);

        // Two states that always swap.
        let flip = TabularMdp::new_average_reward(
            2,
            2,
            vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
            vec![0.0; 4],
            1.0,
            vec![1.0, 0.0],
        )
        .unwrap();
        let d = stationary_distribution(&flip, &Policy::uniform(2, 2)).unwrap();
        for v in &d.values {
            assert!((v - 0.25).abs() < 1e-12);
        }

        // Two absorbing states: stationary distribution is not unique.
        let split = TabularMdp::new_average_reward(
            2,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 2],
            1.0,
            vec![1.0, 0.0],
        )
        .unwrap();
        assert!(matches!(
            stationary_distribution(&split, &Policy::uniform(2, 1)),
            Err(Error::NonErgodicChain(_))
        ));
    }

    #[test]
    fn differential_values_satisfy_average_bellman() {
        let mdp = generate_random_mdp(9, 4, 2, 0.9).unwrap();
        let pi = Policy::random(10, 4, 2);
        let (j, q) = solve_differential_q(&mdp, &pi).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                let next: f64 = (0..4)
                    .map(|s2| mdp.prob(s, a, s2) * pi.state_value(&q.values, s2))
                    .sum();
                let lhs = q[mdp.index(s, a)];
                assert!((lhs - (mdp.reward(s, a) - j + next)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn generators_are_deterministic_and_valid() {
        assert_eq!(
            generate_random_mdp(7, 4, 2, 0.9).unwrap(),
            generate_random_mdp(7, 4, 2, 0.9).unwrap()
        );
        let chain = generate_chain(1, 0.1, 0.9).unwrap();
        assert_eq!(chain.n_states(), 1);
        assert_eq!(chain.prob(0, 0, 0), 1.0);
        assert_eq!(chain.prob(0, 1, 0), 1.0);
        assert_eq!(Policy::all_deterministic(5, 2).len(), 32);
    }

    #[test]
    fn json_round_trip() {
        let mdp = generate_random_mdp(2, 3, 2, 0.7).unwrap();
        assert_eq!(TabularMdp::from_json(&mdp.to_json()).unwrap(), mdp);
        let pi = Policy::random(2, 3, 2);
        assert_eq!(Policy::from_json(&pi.to_json()).unwrap(), pi);
        let bad = mdp.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(TabularMdp::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_rows_are_rejected() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], 1.0, 0.5, vec![1.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![2.0], 1.0, 0.5, vec![1.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, 1.5, vec![1.0]).is_err());
        assert!(Policy::from_rows(vec![vec![0.4, 0.4]]).is_err());
    }
}
