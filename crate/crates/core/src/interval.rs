//! The four minimax bounds, the unified value interval with its
//! misspecification diagnosis, naive MWL / MQL intervals, and the
//! behavior-aware and average-reward variants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classes::FunctionClass;
use crate::empirical::{build_empirical_loss, Dataset};
use crate::error::{Error, Result};
use crate::lp::{lp_solve, LinearProgram, Relation, Sense};
use crate::mdp::{state_action_transition, stationary_distribution, Policy, TabularMdp};
use crate::regularized::{solve_regularized_outer, BoundSide, Regularizer};
use crate::saddle::{
    add_outer_vars, add_sup_block, build_exact_loss, check_distribution, check_status, dot, project_into,
    solve_saddle, AffineMap, BiAffineLoss, Oriented, Role, SaddleOrder, SaddleResult, SolveMethod,
};

/// Solver tolerance the reversal threshold is measured against.
pub const SOLVER_TOL: f64 = 1e-9;

/// Gap between the two sides below which the interval counts as tight.
pub const REVERSAL_TOL: f64 = 10.0 * SOLVER_TOL;

/// Allowed disagreement between `UB_w` and `LB_q` (and `UB_q`, `LB_w`) for
/// convex classes.
pub const MINIMAX_TOL: f64 = 1e-6;

// ── Result types ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveStyle {
    Mwl,
    Mql,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    UbW,
    LbW,
    UbQ,
    LbQ,
    NaiveUpper { style: NaiveStyle },
    NaiveLower { style: NaiveStyle },
    RegularizedUpper { regularizer: Regularizer },
    RegularizedLower { regularizer: Regularizer },
}

impl BoundKind {
    /// Outer variable and order of the four plain bounds.
    pub fn saddle_form(self) -> Option<(Role, SaddleOrder)> {
        match self {
            Self::UbW => Some((Role::W, SaddleOrder::InfSup)),
            Self::LbW => Some((Role::W, SaddleOrder::SupInf)),
            Self::UbQ => Some((Role::Q, SaddleOrder::InfSup)),
            Self::LbQ => Some((Role::Q, SaddleOrder::SupInf)),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::UbW => "ub_w",
            Self::LbW => "lb_w",
            Self::UbQ => "ub_q",
            Self::LbQ => "lb_q",
            Self::NaiveUpper { style: NaiveStyle::Mwl } => "naive_ub_mwl",
            Self::NaiveLower { style: NaiveStyle::Mwl } => "naive_lb_mwl",
            Self::NaiveUpper { style: NaiveStyle::Mql } => "naive_ub_mql",
            Self::NaiveLower { style: NaiveStyle::Mql } => "naive_lb_mql",
            Self::RegularizedUpper { .. } => "regularized_ub_w",
            Self::RegularizedLower { .. } => "regularized_lb_w",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Exact,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub kind: BoundKind,
    pub value: f64,
    pub w_certificate: Option<Vec<f64>>,
    pub q_certificate: Option<Vec<f64>>,
    pub loss_mode: LossMode,
    pub method: SolveMethod,
    pub certificate_gap: f64,
    pub converged: bool,
    pub pivots: usize,
}

impl BoundResult {
    fn from_saddle(kind: BoundKind, r: SaddleResult, mode: LossMode) -> Self {
        Self {
            kind,
            value: r.value,
            w_certificate: Some(r.w_arg().to_vec()),
            q_certificate: Some(r.q_arg().to_vec()),
            loss_mode: mode,
            method: r.method,
            certificate_gap: r.certificate_gap,
            converged: r.converged,
            pivots: r.pivots,
        }
    }

    /// Same result with the optimizer vectors dropped.
    pub fn without_certificates(mut self) -> Self {
        self.w_certificate = None;
        self.q_certificate = None;
        self
    }
}

/// Which class the ordering of the two sides points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    /// The two sides agree within tolerance.
    Tight,
    /// `UB_w < UB_q`: the value class cannot contain `Q^pi` in its hull.
    QMisspecified,
    /// `UB_w > UB_q`: the weight class cannot contain `w_{pi/mu}` in its hull.
    WMisspecified,
    /// Naive and regularized intervals carry no diagnosis.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueInterval {
    pub low: f64,
    pub high: f64,
    pub reversed: bool,
    pub diagnosis: Diagnosis,
    pub components: Vec<BoundResult>,
}

impl ValueInterval {
    pub fn length(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.low - tol <= value && value <= self.high + tol
    }

    pub fn component(&self, kind: BoundKind) -> Option<&BoundResult> {
        self.components.iter().find(|c| c.kind == kind)
    }

    pub fn component_value(&self, kind: BoundKind) -> Option<f64> {
        self.component(kind).map(|c| c.value)
    }

    pub fn without_certificates(mut self) -> Self {
        self.components = self.components.into_iter().map(BoundResult::without_certificates).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub value: f64,
    pub half_width: f64,
}

// ── Loss sources ────────────────────────────────────────────────────────

/// Where the loss coefficients come from.
#[derive(Debug, Clone, Copy)]
pub enum LossSource<'a> {
    Exact { mdp: &'a TabularMdp, mu: &'a [f64] },
    Empirical { dataset: &'a Dataset },
}

impl LossSource<'_> {
    pub fn loss(&self, policy: &Policy) -> Result<BiAffineLoss> {
        match self {
            Self::Exact { mdp, mu } => build_exact_loss(mdp, policy, mu),
            Self::Empirical { dataset } => build_empirical_loss(dataset, policy),
        }
    }

    pub fn mode(&self) -> LossMode {
        match self {
            Self::Exact { .. } => LossMode::Exact,
            Self::Empirical { .. } => LossMode::Empirical,
        }
    }

    /// Data distribution over pairs: `mu` itself or the dataset's
    /// empirical frequencies.
    pub fn data_distribution(&self) -> Vec<f64> {
        match self {
            Self::Exact { mu, .. } => mu.to_vec(),
            Self::Empirical { dataset } => dataset.pair_frequencies(),
        }
    }
}

// ── Bounds ──────────────────────────────────────────────────────────────

/// One of `UB_w`, `LB_w`, `UB_q`, `LB_q`.
pub fn bound(
    kind: BoundKind,
    loss: &BiAffineLoss,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    mode: LossMode,
) -> Result<BoundResult> {
    let (role, order) = kind.saddle_form().ok_or_else(|| {
        Error::InvalidArgument(format!("{} is not one of the four saddle bounds", kind.label()))
    })?;
    let r = solve_saddle(loss, w_class, q_class, role, order)?;
    Ok(BoundResult::from_saddle(kind, r, mode))
}

pub fn bound_for(
    kind: BoundKind,
    source: LossSource,
    policy: &Policy,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
) -> Result<BoundResult> {
    bound(kind, &source.loss(policy)?, q_class, w_class, source.mode())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourBounds {
    pub ub_w: BoundResult,
    pub lb_w: BoundResult,
    pub ub_q: BoundResult,
    pub lb_q: BoundResult,
}

pub fn all_bounds(
    loss: &BiAffineLoss,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    mode: LossMode,
) -> Result<FourBounds> {
    Ok(FourBounds {
        ub_w: bound(BoundKind::UbW, loss, q_class, w_class, mode)?,
        lb_w: bound(BoundKind::LbW, loss, q_class, w_class, mode)?,
        ub_q: bound(BoundKind::UbQ, loss, q_class, w_class, mode)?,
        lb_q: bound(BoundKind::LbQ, loss, q_class, w_class, mode)?,
    })
}

/// Sorts `UB_w` and `UB_q` into `[low, high]`. For convex classes the
/// other two bounds are also computed and must coincide with them.
pub fn unified_interval(
    loss: &BiAffineLoss,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    mode: LossMode,
) -> Result<ValueInterval> {
    let ub_w = bound(BoundKind::UbW, loss, q_class, w_class, mode)?;
    let ub_q = bound(BoundKind::UbQ, loss, q_class, w_class, mode)?;
    let mut components = vec![ub_w.clone(), ub_q.clone()];
    if q_class.is_convex() && w_class.is_convex() {
        let lb_q = bound(BoundKind::LbQ, loss, q_class, w_class, mode)?;
        let lb_w = bound(BoundKind::LbW, loss, q_class, w_class, mode)?;
        if (ub_w.value - lb_q.value).abs() > MINIMAX_TOL || (ub_q.value - lb_w.value).abs() > MINIMAX_TOL {
            return Err(Error::Invariant(format!(
                "minimax equality failed: ub_w {} lb_q {} ub_q {} lb_w {}",
                ub_w.value, lb_q.value, ub_q.value, lb_w.value
            )));
        }
        components.push(lb_w);
        components.push(lb_q);
    }
    let (a, b) = (ub_w.value, ub_q.value);
    let threshold = REVERSAL_TOL * 1.0_f64.max(a.abs()).max(b.abs());
    let diagnosis = if a < b - threshold {
        Diagnosis::QMisspecified
    } else if a > b + threshold {
        Diagnosis::WMisspecified
    } else {
        Diagnosis::Tight
    };
    Ok(ValueInterval {
        low: a.min(b),
        high: a.max(b),
        reversed: diagnosis == Diagnosis::QMisspecified,
        diagnosis,
        components,
    })
}

pub fn unified_interval_for(
    source: LossSource,
    policy: &Policy,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
) -> Result<ValueInterval> {
    unified_interval(&source.loss(policy)?, q_class, w_class, source.mode())
}

/// Midpoint of the interval and its half-width.
pub fn point_estimate(interval: &ValueInterval) -> PointEstimate {
    PointEstimate {
        value: 0.5 * (interval.low + interval.high),
        half_width: 0.5 * (interval.high - interval.low),
    }
}

// ── Naive intervals ─────────────────────────────────────────────────────

/// `center +- inf_x sup_y |L_x(x, y)|`: MWL puts `w` outside and centers
/// at `E_w[r]`, MQL puts `q` outside and centers at `q(s0, pi)`.
pub fn naive_interval(
    style: NaiveStyle,
    loss: &BiAffineLoss,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    mode: LossMode,
) -> Result<ValueInterval> {
    loss.check(w_class, q_class)?;
    let (role, outer, inner) = match style {
        NaiveStyle::Mwl => (Role::W, w_class, q_class),
        NaiveStyle::Mql => (Role::Q, q_class, w_class),
    };
    let problem = Oriented::new(loss, role);
    // The absolute-value part is `kappa + c(x).y`; the center is the rest.
    let (kappa, center_const) = match style {
        NaiveStyle::Mwl => (loss.constant, 0.0),
        NaiveStyle::Mql => (0.0, loss.constant),
    };
    let worst = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let c = problem.inner_coeff(x);
        let (hi, y_hi) = inner.optimize_affine(&c, Sense::Maximize)?;
        let (lo, y_lo) = inner.optimize_affine(&c, Sense::Minimize)?;
        Ok(if kappa + hi >= -(kappa + lo) {
            (kappa + hi, y_hi)
        } else {
            (-(kappa + lo), y_lo)
        })
    };

    let (x_hat, half_width, y_hat, method, gap, pivots) = match outer {
        FunctionClass::FiniteSet { .. } | FunctionClass::Singleton { .. } => {
            let members = match outer {
                FunctionClass::FiniteSet { members } => members.clone(),
                FunctionClass::Singleton { value } => vec![value.clone()],
                _ => unreachable!(),
            };
            let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
            for x in members {
                let (hw, y) = worst(&x)?;
                if best.as_ref().is_none_or(|(_, b, _)| hw < *b) {
                    best = Some((x, hw, y));
                }
            }
            let (x, hw, y) = best.expect("nonempty class");
            (x, hw, y, SolveMethod::Enumeration, 0.0, 0)
        }
        _ => {
            let mut lp = LinearProgram::new(Sense::Minimize);
            let xvars = add_outer_vars(&mut lp, outer)?;
            let lin = problem.m.transpose();
            let z = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
            for sign in [1.0, -1.0] {
                let map = AffineMap { c0: &problem.b, lin: &lin, sign };
                let e = add_sup_block(&mut lp, &xvars, &map, inner)?;
                let mut row = vec![(z, 1.0)];
                row.extend(e.terms.iter().map(|&(v, c)| (v, -c)));
                lp.add_constraint(row, Relation::Ge, sign * kappa + e.constant);
            }
            let sol = lp_solve(&lp)?;
            check_status(sol.status)?;
            let mut x: Vec<f64> = xvars.iter().map(|&v| sol.x[v]).collect();
            project_into(outer, &mut x);
            let (hw, y) = worst(&x)?;
            let gap = (hw - sol.objective).abs();
            (x, hw, y, SolveMethod::Lp, gap, sol.pivots)
        }
    };
    let center = center_const + dot(&problem.a, &x_hat);
    let (w_cert, q_cert) = match role {
        Role::W => (x_hat, y_hat),
        Role::Q => (y_hat, x_hat),
    };
    let make = |kind: BoundKind, value: f64| BoundResult {
        kind,
        value,
        w_certificate: Some(w_cert.clone()),
        q_certificate: Some(q_cert.clone()),
        loss_mode: mode,
        method,
        certificate_gap: gap,
        converged: true,
        pivots,
    };
    Ok(ValueInterval {
        low: center - half_width,
        high: center + half_width,
        reversed: false,
        diagnosis: Diagnosis::NotApplicable,
        components: vec![
            make(BoundKind::NaiveLower { style }, center - half_width),
            make(BoundKind::NaiveUpper { style }, center + half_width),
        ],
    })
}

// ── Regularized interval ────────────────────────────────────────────────

/// `[sup_w inf_q L - E_mu f(w), inf_w sup_q L + E_mu f(w)]`.
pub fn regularized_interval(
    loss: &BiAffineLoss,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    mu: &[f64],
    regularizer: Regularizer,
    mode: LossMode,
) -> Result<ValueInterval> {
    let up = solve_regularized_outer(loss, w_class, q_class, mu, regularizer, BoundSide::Upper)?;
    let lo = solve_regularized_outer(loss, w_class, q_class, mu, regularizer, BoundSide::Lower)?;
    let high = BoundResult::from_saddle(BoundKind::RegularizedUpper { regularizer }, up, mode);
    let low = BoundResult::from_saddle(BoundKind::RegularizedLower { regularizer }, lo, mode);
    Ok(ValueInterval {
        low: low.value,
        high: high.value,
        reversed: low.value > high.value,
        diagnosis: Diagnosis::NotApplicable,
        components: vec![low, high],
    })
}

// ── Behavior-aware variant ──────────────────────────────────────────────

/// State-indexed loss `v(s0) + E_mu[w(s) (rho(s,a)(r + gamma v(s')) - v(s))]`
/// with data `(s, a) ~ state_mu(s) behavior(a|s)` and `rho = pi / behavior`.
pub fn build_behavior_aware_loss(
    mdp: &TabularMdp,
    policy: &Policy,
    behavior: &Policy,
    state_mu: &[f64],
) -> Result<BiAffineLoss> {
    policy.check_shape(mdp)?;
    behavior.check_shape(mdp)?;
    check_distribution(state_mu, mdp.n_states())?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut bad = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            if state_mu[s] > 0.0 && policy.prob(s, a) > 0.0 && behavior.prob(s, a) == 0.0 {
                bad.push((s, a));
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::UnsupportedAction { pairs: bad });
    }
    // Where the behavior policy acts, behavior * rho = pi; elsewhere the
    // data never shows the action and pi is zero there too.
    let mut rho = vec![0.0; ns];
    let mut k = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        let m = state_mu[s];
        if m == 0.0 {
            continue;
        }
        k[(s, s)] -= m;
        for a in 0..na {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            rho[s] += m * p * mdp.reward(s, a);
            for (next, &t) in mdp.next_state_probs(s, a).iter().enumerate() {
                k[(s, next)] += m * p * mdp.gamma() * t;
            }
        }
    }
    BiAffineLoss::new(mdp.initial().to_vec(), rho, k, 0.0)
}

/// Unified interval of the state-indexed behavior-aware loss.
pub fn behavior_aware_bounds(
    mdp: &TabularMdp,
    policy: &Policy,
    behavior: &Policy,
    state_mu: &[f64],
    v_class: &FunctionClass,
    w_class: &FunctionClass,
) -> Result<ValueInterval> {
    let loss = build_behavior_aware_loss(mdp, policy, behavior, state_mu)?;
    unified_interval(&loss, v_class, w_class, LossMode::Exact)
}

// ── Average-reward variant ──────────────────────────────────────────────

/// `E_w[r + q(s', pi) - q(s, a)]`: `nu = 0`, `rho = mu * R`,
/// `K = diag(mu)(P^pi - I)`.
pub fn build_average_reward_loss(mdp: &TabularMdp, policy: &Policy, mu: &[f64]) -> Result<BiAffineLoss> {
    policy.check_shape(mdp)?;
    check_distribution(mu, mdp.n_pairs())?;
    let n = mdp.n_pairs();
    let mut k = state_action_transition(mdp, policy) - DMatrix::identity(n, n);
    for (i, m) in mu.iter().enumerate() {
        k.row_mut(i).scale_mut(*m);
    }
    let rho = mu.iter().zip(mdp.mean_rewards()).map(|(m, r)| m * r).collect();
    BiAffineLoss::new(vec![0.0; n], rho, k, 0.0)
}

/// Unified interval for the long-run average reward. The target policy's
/// chain must be ergodic. Weight classes should enforce `E_mu[w] = 1` for
/// the value-side bounds to be valid.
pub fn average_reward_bounds(
    mdp: &TabularMdp,
    policy: &Policy,
    mu: &[f64],
    q_class: &FunctionClass,
    w_class: &FunctionClass,
) -> Result<ValueInterval> {
    stationary_distribution(mdp, policy)?;
    let loss = build_average_reward_loss(mdp, policy, mu)?;
    unified_interval(&loss, q_class, w_class, LossMode::Exact)
}
