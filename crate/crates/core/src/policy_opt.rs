//! Pessimistic and optimistic policy selection over an explicit policy
//! list, the occupancy-mismatch diagnostic, and the Rmax / Rmin
//! equivalence check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{canonical_box_classes, rmax_weight_cap, FunctionClass};
use crate::error::{Error, Result};
use crate::interval::{bound, BoundKind, LossSource};
use crate::lp::Sense;
use crate::mdp::{build_rmax, build_rmin, j_pi, solve_d_pi, solve_q_pi, state_action_transition, Policy, TabularMdp};
use crate::saddle::dot;

// ── Types ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyClass {
    policies: Vec<Policy>,
}

impl PolicyClass {
    pub fn new(policies: Vec<Policy>) -> Result<Self> {
        let first = policies
            .first()
            .ok_or_else(|| Error::InvalidArgument("policy class is empty".into()))?;
        let shape = (first.n_states(), first.n_actions());
        if policies.iter().any(|p| (p.n_states(), p.n_actions()) != shape) {
            return Err(Error::InvalidPolicy("policies in a class must share a shape".into()));
        }
        Ok(Self { policies })
    }

    pub fn all_deterministic(mdp: &TabularMdp) -> Self {
        Self {
            policies: Policy::all_deterministic(mdp.n_states(), mdp.n_actions()),
        }
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationMode {
    /// Maximize `LB_w`.
    MlbPo,
    /// Maximize `UB_w`.
    MubPo,
    /// Maximize `LB_q`.
    MlbPoQside,
}

impl OptimizationMode {
    fn kind(self) -> BoundKind {
        match self {
            Self::MlbPo => BoundKind::LbW,
            Self::MubPo => BoundKind::UbW,
            Self::MlbPoQside => BoundKind::LbQ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub mode: OptimizationMode,
    pub chosen_index: usize,
    pub chosen_policy: Policy,
    pub objective_values: Vec<f64>,
    pub ipm_report: Option<IpmReport>,
}

// ── Selection ───────────────────────────────────────────────────────────

/// Index of the largest value, lowest index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn optimize_policy(
    mode: OptimizationMode,
    source: LossSource,
    class: &PolicyClass,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
) -> Result<OptimizationOutcome> {
    let values: Vec<f64> = class
        .policies
        .par_iter()
        .map(|pi| {
            let loss = source.loss(pi)?;
            Ok(bound(mode.kind(), &loss, q_class, w_class, source.mode())?.value)
        })
        .collect::<Result<_>>()?;
    let chosen = argmax(&values);
    Ok(OptimizationOutcome {
        mode,
        chosen_index: chosen,
        chosen_policy: class.policies[chosen].clone(),
        objective_values: values,
        ipm_report: None,
    })
}

/// Pessimistic selection: `argmax LB_w`.
pub fn mlb_po(source: LossSource, class: &PolicyClass, q_class: &FunctionClass, w_class: &FunctionClass) -> Result<OptimizationOutcome> {
    optimize_policy(OptimizationMode::MlbPo, source, class, q_class, w_class)
}

/// Optimistic selection: `argmax UB_w`.
pub fn mub_po(source: LossSource, class: &PolicyClass, q_class: &FunctionClass, w_class: &FunctionClass) -> Result<OptimizationOutcome> {
    optimize_policy(OptimizationMode::MubPo, source, class, q_class, w_class)
}

/// Pessimistic selection on the value side: `argmax LB_q`.
pub fn mlb_po_qside(
    source: LossSource,
    class: &PolicyClass,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
) -> Result<OptimizationOutcome> {
    optimize_policy(OptimizationMode::MlbPoQside, source, class, q_class, w_class)
}

// ── Occupancy mismatch ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpmReport {
    /// `sup_{pi, q} |E_{w mu}[T^pi q - q] - E_{d^pi_hat}[T^pi q - q]|`.
    pub ipm: f64,
    /// `|w mu - d^pi_hat|_1`.
    pub l1_distance: f64,
    /// `l1_distance * max |T^pi q - q|`.
    pub holder_bound: f64,
    /// `max over policies with Q^pi in the value class of J(pi) - J(pi_hat)`.
    pub regret: f64,
    /// `ipm >= regret` within tolerance.
    pub ipm_dominates_regret: bool,
    /// `l1 >= (1 - gamma) regret / (2 r_max)` within tolerance.
    pub l1_dominates_regret: bool,
    pub holder_holds: bool,
}

/// Compares the weighted data distribution `w mu` with the occupancy of
/// `pi_hat` through the discriminators `T^pi q - q` over a box value class.
pub fn ipm_diagnostic(
    mdp: &TabularMdp,
    w: &[f64],
    mu: &[f64],
    pi_hat: &Policy,
    q_class: &FunctionClass,
    class: &PolicyClass,
) -> Result<IpmReport> {
    let FunctionClass::Box { .. } = q_class else {
        return Err(Error::InvalidArgument("the mismatch diagnostic needs a box value class".into()));
    };
    let n = mdp.n_pairs();
    if w.len() != n || mu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len().min(mu.len()) });
    }
    let d_hat = solve_d_pi(mdp, pi_hat)?;
    let delta: Vec<f64> = (0..n).map(|i| w[i] * mu[i] - d_hat.values[i]).collect();
    let reward_part = dot(&delta, mdp.mean_rewards());
    let gamma = mdp.gamma();
    let mut ipm: f64 = 0.0;
    for pi in class.policies() {
        // E_delta[T^pi q - q] = delta.R + ((gamma P^pi - I)^T delta).q
        let p = state_action_transition(mdp, pi);
        let ptd = p.tr_mul(&nalgebra::DVector::from_column_slice(&delta));
        let coeff: Vec<f64> = (0..n).map(|i| gamma * ptd[i] - delta[i]).collect();
        let (hi, _) = q_class.vertex_optimum_affine(&coeff, Sense::Maximize)?;
        let (lo, _) = q_class.vertex_optimum_affine(&coeff, Sense::Minimize)?;
        ipm = ipm.max((reward_part + hi).abs()).max((reward_part + lo).abs());
    }
    let l1: f64 = delta.iter().map(|d| d.abs()).sum();
    let c_q = q_class.range_cap()?;
    let holder = l1 * (mdp.r_max() + (1.0 + gamma) * c_q);

    let (lo, hi) = q_class.coordinate_ranges()?;
    let j_hat = j_pi(mdp, pi_hat)?;
    let mut regret = f64::NEG_INFINITY;
    for pi in class.policies() {
        let q = solve_q_pi(mdp, pi)?;
        let inside = q.values.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *v >= l - 1e-9 && *v <= h + 1e-9);
        if inside {
            regret = regret.max(j_pi(mdp, pi)? - j_hat);
        }
    }
    let tol = 1e-6;
    Ok(IpmReport {
        ipm,
        l1_distance: l1,
        holder_bound: holder,
        regret,
        ipm_dominates_regret: ipm >= regret - tol,
        l1_dominates_regret: l1 >= (1.0 - gamma) * regret / (2.0 * mdp.r_max()) - tol,
        holder_holds: ipm <= holder + tol,
    })
}

// ── Rmax / Rmin equivalence ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmaxRow {
    pub index: usize,
    pub lb_w: f64,
    pub j_rmin: f64,
    pub ub_w: f64,
    pub j_rmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmaxReport {
    pub rows: Vec<RmaxRow>,
    pub max_deviation: f64,
    pub mub_choice: usize,
    pub mlb_choice: usize,
    pub best_j_rmax: f64,
    pub best_j_rmin: f64,
    pub argmax_agrees: bool,
    /// Policies whose bounds miss the Rmax / Rmin values by more than the
    /// tolerance.
    pub violations: Vec<usize>,
    pub passed: bool,
}

/// Exact-data regime with `mu` uniform on the known states' pairs and the
/// canonical box classes: `LB_w` must equal the value in the Rmin MDP and
/// `UB_w` the value in the Rmax MDP for every policy.
pub fn rmax_equivalence_check(mdp: &TabularMdp, known_states: &[usize], class: &PolicyClass) -> Result<RmaxReport> {
    let tol = 1e-6;
    let na = mdp.n_actions();
    let n_known_pairs = known_states.len() * na;
    if n_known_pairs == 0 {
        return Err(Error::InvalidArgument("need at least one known state".into()));
    }
    let mut mu = vec![0.0; mdp.n_pairs()];
    for &s in known_states {
        for a in 0..na {
            mu[mdp.index(s, a)] = 1.0 / n_known_pairs as f64;
        }
    }
    let m_max = build_rmax(mdp, known_states)?;
    let m_min = build_rmin(mdp, known_states)?;
    let (q_class, w_class) = canonical_box_classes(mdp, rmax_weight_cap(n_known_pairs, mdp.gamma()))?;
    let source = LossSource::Exact { mdp, mu: &mu };
    let rows: Vec<RmaxRow> = class
        .policies()
        .par_iter()
        .enumerate()
        .map(|(index, pi)| {
            let loss = source.loss(pi)?;
            Ok(RmaxRow {
                index,
                lb_w: bound(BoundKind::LbW, &loss, &q_class, &w_class, source.mode())?.value,
                ub_w: bound(BoundKind::UbW, &loss, &q_class, &w_class, source.mode())?.value,
                j_rmin: j_pi(&m_min, pi)?,
                j_rmax: j_pi(&m_max, pi)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut max_dev: f64 = 0.0;
    let mut violations = Vec::new();
    for r in &rows {
        let dev = (r.lb_w - r.j_rmin).abs().max((r.ub_w - r.j_rmax).abs());
        max_dev = max_dev.max(dev);
        if dev > tol {
            violations.push(r.index);
        }
    }
    let ubs: Vec<f64> = rows.iter().map(|r| r.ub_w).collect();
    let lbs: Vec<f64> = rows.iter().map(|r| r.lb_w).collect();
    let mub_choice = argmax(&ubs);
    let mlb_choice = argmax(&lbs);
    let best_j_rmax = rows.iter().map(|r| r.j_rmax).fold(f64::NEG_INFINITY, f64::max);
    let best_j_rmin = rows.iter().map(|r| r.j_rmin).fold(f64::NEG_INFINITY, f64::max);
    let argmax_agrees =
        rows[mub_choice].j_rmax >= best_j_rmax - tol && rows[mlb_choice].j_rmin >= best_j_rmin - tol;
    Ok(RmaxReport {
        passed: violations.is_empty() && argmax_agrees,
        rows,
        max_deviation: max_dev,
        mub_choice,
        mlb_choice,
        best_j_rmax,
        best_j_rmin,
        argmax_agrees,
        violations,
    })
}
