//! Bi-affine losses and exact inf-sup / sup-inf solvers.
//!
//! Every problem is rewritten in a role-agnostic form
//! `L(x, y) = c + a.x + b.y + x^T M y` where `x` is the outer variable.
//! Convex outer classes become a single LP (the inner sup is replaced by an
//! equivalent epigraph or dual block); finite outer classes are enumerated
//! with a closed-form inner optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classes::FunctionClass;
use crate::error::{Error, Result};
use crate::lp::{lp_solve, LinearProgram, LpStatus, Relation, Sense};
use crate::mdp::{initial_pair_distribution, state_action_transition, Policy, TabularMdp};

/// Slack allowed between the LP optimum and the re-optimized certificate.
pub const CERTIFICATE_TOL: f64 = 1e-8;

// ── Loss ────────────────────────────────────────────────────────────────

/// `L(w, q) = constant + nu.q + w.rho + w^T K q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiAffineLoss {
    pub nu: Vec<f64>,
    pub rho: Vec<f64>,
    /// Rows indexed like `w`, columns like `q`.
    pub k: DMatrix<f64>,
    pub constant: f64,
}

impl BiAffineLoss {
    pub fn new(nu: Vec<f64>, rho: Vec<f64>, k: DMatrix<f64>, constant: f64) -> Result<Self> {
        if k.nrows() != rho.len() {
            return Err(Error::DimensionMismatch {
                expected: rho.len(),
                got: k.nrows(),
            });
        }
        if k.ncols() != nu.len() {
            return Err(Error::DimensionMismatch {
                expected: nu.len(),
                got: k.ncols(),
            });
        }
        Ok(Self { nu, rho, k, constant })
    }

    pub fn w_dim(&self) -> usize {
        self.rho.len()
    }

    pub fn q_dim(&self) -> usize {
        self.nu.len()
    }

    pub fn evaluate(&self, w: &[f64], q: &[f64]) -> f64 {
        self.constant + dot(&self.nu, q) + dot(w, &self.rho) + self.bilinear(w, q)
    }

    /// `w^T K q`.
    pub fn bilinear(&self, w: &[f64], q: &[f64]) -> f64 {
        let kq = &self.k * DVector::from_column_slice(q);
        dot(w, kq.as_slice())
    }

    /// `E_w[r]`, the part of the loss that does not involve `q`.
    pub fn reward_term(&self, w: &[f64]) -> f64 {
        dot(w, &self.rho)
    }

    /// Everything except `E_w[r]`: `L = E_w[r] + L_w(w, q)`.
    pub fn l_w(&self, w: &[f64], q: &[f64]) -> f64 {
        self.constant + dot(&self.nu, q) + self.bilinear(w, q)
    }

    /// `q(s0, pi)` including the constant offset.
    pub fn initial_term(&self, q: &[f64]) -> f64 {
        self.constant + dot(&self.nu, q)
    }

    /// Everything except `q(s0, pi)`: `L = q(s0, pi) + L_q(w, q)`.
    pub fn l_q(&self, w: &[f64], q: &[f64]) -> f64 {
        dot(w, &self.rho) + self.bilinear(w, q)
    }

    pub(crate) fn check(&self, w_class: &FunctionClass, q_class: &FunctionClass) -> Result<()> {
        if w_class.dim() != self.w_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.w_dim(),
                got: w_class.dim(),
            });
        }
        if q_class.dim() != self.q_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.q_dim(),
                got: q_class.dim(),
            });
        }
        Ok(())
    }
}

/// Exact-expectation loss for `policy` under data distribution `mu`:
/// `nu = d0 * pi`, `rho = mu * R`, `K = diag(mu) (gamma P^pi - I)`.
pub fn build_exact_loss(mdp: &TabularMdp, policy: &Policy, mu: &[f64]) -> Result<BiAffineLoss> {
    policy.check_shape(mdp)?;
    check_distribution(mu, mdp.n_pairs())?;
    let n = mdp.n_pairs();
    let p = state_action_transition(mdp, policy);
    let mut k = p * mdp.gamma() - DMatrix::identity(n, n);
    for (i, m) in mu.iter().enumerate() {
        k.row_mut(i).scale_mut(*m);
    }
    let rho = mu.iter().zip(mdp.mean_rewards()).map(|(m, r)| m * r).collect();
    BiAffineLoss::new(initial_pair_distribution(mdp, policy), rho, k, 0.0)
}

pub(crate) fn check_distribution(mu: &[f64], n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: mu.len(),
        });
    }
    let total: f64 = mu.iter().sum();
    if mu.iter().any(|m| *m < 0.0 || !m.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("mu must be a distribution".into()));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ── Problem orientation ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    W,
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaddleOrder {
    /// `inf_outer sup_inner`.
    InfSup,
    /// `sup_outer inf_inner`.
    SupInf,
}

impl SaddleOrder {
    fn inner_sense(self) -> Sense {
        match self {
            Self::InfSup => Sense::Maximize,
            Self::SupInf => Sense::Minimize,
        }
    }

    fn outer_sense(self) -> Sense {
        match self {
            Self::InfSup => Sense::Minimize,
            Self::SupInf => Sense::Maximize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Lp,
    Enumeration,
    Grid,
    Subgradient,
    CuttingPlane,
}

/// `L(x, y) = constant + a.x + b.y + x^T m y`.
#[derive(Debug, Clone)]
pub(crate) struct Oriented {
    pub constant: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Outer x inner.
    pub m: DMatrix<f64>,
}

impl Oriented {
    pub fn new(loss: &BiAffineLoss, outer: Role) -> Self {
        match outer {
            Role::W => Self {
                constant: loss.constant,
                a: loss.rho.clone(),
                b: loss.nu.clone(),
                m: loss.k.clone(),
            },
            Role::Q => Self {
                constant: loss.constant,
                a: loss.nu.clone(),
                b: loss.rho.clone(),
                m: loss.k.transpose(),
            },
        }
    }

    /// Inner coefficient `b + m^T x`.
    pub fn inner_coeff(&self, x: &[f64]) -> Vec<f64> {
        let mx = self.m.tr_mul(&DVector::from_column_slice(x));
        self.b.iter().zip(mx.iter()).map(|(b, v)| b + v).collect()
    }

    /// Outer coefficient `a + m y`.
    pub fn outer_coeff(&self, y: &[f64]) -> Vec<f64> {
        let my = &self.m * DVector::from_column_slice(y);
        self.a.iter().zip(my.iter()).map(|(a, v)| a + v).collect()
    }

    /// Inner optimum at a fixed outer point.
    pub fn inner_value(&self, x: &[f64], inner: &FunctionClass, sense: Sense) -> Result<(f64, Vec<f64>)> {
        let (v, y) = inner.optimize_affine(&self.inner_coeff(x), sense)?;
        Ok((self.constant + dot(&self.a, x) + v, y))
    }
}

// ── LP building blocks ──────────────────────────────────────────────────

/// `constant + sum coeff * var`.
#[derive(Debug, Clone, Default)]
pub(crate) struct LinearExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    fn add_to_objective(&self, lp: &mut LinearProgram, scale: f64) {
        for &(j, c) in &self.terms {
            lp.objective[j] += scale * c;
        }
    }
}

/// Affine map `x -> c0 + lin x` with `lin` of shape inner x outer.
pub(crate) struct AffineMap<'a> {
    pub c0: &'a [f64],
    pub lin: &'a DMatrix<f64>,
    pub sign: f64,
}

impl AffineMap<'_> {
    fn c0(&self, i: usize) -> f64 {
        self.sign * self.c0[i]
    }

    fn row_terms(&self, i: usize, xvars: &[usize], scale: f64) -> Vec<(usize, f64)> {
        xvars
            .iter()
            .enumerate()
            .filter_map(|(k, &v)| {
                let c = self.sign * self.lin[(i, k)] * scale;
                (c != 0.0).then_some((v, c))
            })
            .collect()
    }

    /// `sum_i y_i (lin x)_i` as terms over `xvars`.
    fn combine_terms(&self, y: &[f64], xvars: &[usize]) -> Vec<(usize, f64)> {
        let ly = self.lin.tr_mul(&DVector::from_column_slice(y));
        xvars
            .iter()
            .zip(ly.iter())
            .filter(|(_, c)| **c != 0.0)
            .map(|(&v, &c)| (v, self.sign * c))
            .collect()
    }
}

/// Adds variables and rows so that the returned expression `E` satisfies
/// `E >= sup_{y in inner} c(x).y` for every feasible LP point, with
/// equality attainable. Only valid when `E` is being minimized.
pub(crate) fn add_sup_block(
    lp: &mut LinearProgram,
    xvars: &[usize],
    c: &AffineMap,
    inner: &FunctionClass,
) -> Result<LinearExpr> {
    let mut expr = LinearExpr::default();
    match inner {
        FunctionClass::Box { lower, upper } => {
            // sup_y c.y = sum_i lo_i c_i + max(0, (hi_i - lo_i) c_i).
            for (i, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
                expr.constant += lo * c.c0(i);
                expr.terms.extend(c.row_terms(i, xvars, lo));
                let width = hi - lo;
                if width > 0.0 {
                    let u = lp.add_var(0.0, f64::INFINITY, 0.0);
                    let mut row = vec![(u, 1.0)];
                    row.extend(c.row_terms(i, xvars, -width));
                    lp.add_constraint(row, Relation::Ge, width * c.c0(i));
                    expr.terms.push((u, 1.0));
                }
            }
        }
        FunctionClass::Polytope { a, b, a_eq, b_eq } => {
            // sup {c.y : A y <= b, E y = f} = min {b.l + f.e : A^T l + E^T e = c, l >= 0}.
            let lambdas: Vec<usize> = b.iter().map(|&rhs| {
                let v = lp.add_var(0.0, f64::INFINITY, 0.0);
                expr.terms.push((v, rhs));
                v
            }).collect();
            let etas: Vec<usize> = b_eq.iter().map(|&rhs| {
                let v = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
                expr.terms.push((v, rhs));
                v
            }).collect();
            for i in 0..inner.dim() {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (r, &l) in lambdas.iter().enumerate() {
                    if a[r][i] != 0.0 {
                        row.push((l, a[r][i]));
                    }
                }
                for (r, &e) in etas.iter().enumerate() {
                    if a_eq[r][i] != 0.0 {
                        row.push((e, a_eq[r][i]));
                    }
                }
                row.extend(c.row_terms(i, xvars, -1.0));
                lp.add_constraint(row, Relation::Eq, c.c0(i));
            }
        }
        FunctionClass::FiniteSet { members } => {
            let t = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
            for y in members {
                let mut row = vec![(t, 1.0)];
                row.extend(c.combine_terms(y, xvars).into_iter().map(|(v, k)| (v, -k)));
                let c0y: f64 = (0..y.len()).map(|i| c.c0(i) * y[i]).sum();
                lp.add_constraint(row, Relation::Ge, c0y);
            }
            expr.terms.push((t, 1.0));
        }
        FunctionClass::Singleton { value } => {
            expr.constant = (0..value.len()).map(|i| c.c0(i) * value[i]).sum();
            expr.terms = c.combine_terms(value, xvars);
        }
    }
    Ok(expr)
}

/// Adds the outer variable constrained to a convex class.
pub(crate) fn add_outer_vars(lp: &mut LinearProgram, outer: &FunctionClass) -> Result<Vec<usize>> {
    match outer {
        FunctionClass::Box { lower, upper } => Ok(lower
            .iter()
            .zip(upper)
            .map(|(&l, &u)| lp.add_var(l, u, 0.0))
            .collect()),
        FunctionClass::Polytope { a, b, a_eq, b_eq } => {
            let vars: Vec<usize> = (0..outer.dim())
                .map(|_| lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0))
                .collect();
            let map = |row: &Vec<f64>| -> Vec<(usize, f64)> {
                row.iter()
                    .enumerate()
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(i, c)| (vars[i], *c))
                    .collect()
            };
            for (row, rhs) in a.iter().zip(b) {
                lp.add_constraint(map(row), Relation::Le, *rhs);
            }
            for (row, rhs) in a_eq.iter().zip(b_eq) {
                lp.add_constraint(map(row), Relation::Eq, *rhs);
            }
            Ok(vars)
        }
        _ => Err(Error::InvalidArgument("outer LP needs a box or polytope".into())),
    }
}

/// Pulls an LP point back into a box so that rounding noise never leaves
/// the class.
pub(crate) fn project_into(outer: &FunctionClass, x: &mut [f64]) {
    if let FunctionClass::Box { lower, upper } = outer {
        for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

pub(crate) fn check_status(status: LpStatus) -> Result<()> {
    match status {
        LpStatus::Optimal => Ok(()),
        LpStatus::Infeasible => Err(Error::InfeasibleClass),
        LpStatus::Unbounded => Err(Error::UnboundedObjective),
    }
}

// ── Saddle solver ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleResult {
    pub value: f64,
    pub outer_role: Role,
    pub order: SaddleOrder,
    pub outer_arg: Vec<f64>,
    pub inner_arg: Vec<f64>,
    pub method: SolveMethod,
    pub lp_status: Option<LpStatus>,
    pub pivots: usize,
    /// Distance between the solver's optimum and the value recomputed by
    /// re-optimizing the inner problem at `outer_arg`.
    pub certificate_gap: f64,
    pub converged: bool,
}

impl SaddleResult {
    pub fn w_arg(&self) -> &[f64] {
        match self.outer_role {
            Role::W => &self.outer_arg,
            Role::Q => &self.inner_arg,
        }
    }

    pub fn q_arg(&self) -> &[f64] {
        match self.outer_role {
            Role::W => &self.inner_arg,
            Role::Q => &self.outer_arg,
        }
    }
}

fn classes_for(role: Role, w_class: &FunctionClass, q_class: &FunctionClass) -> (FunctionClass, FunctionClass) {
    match role {
        Role::W => (w_class.clone(), q_class.clone()),
        Role::Q => (q_class.clone(), w_class.clone()),
    }
}

/// Solves `inf_x sup_y` or `sup_x inf_y` of the loss with `x` the variable
/// named by `outer_role`.
pub fn solve_saddle(
    loss: &BiAffineLoss,
    w_class: &FunctionClass,
    q_class: &FunctionClass,
    outer_role: Role,
    order: SaddleOrder,
) -> Result<SaddleResult> {
    loss.check(w_class, q_class)?;
    let (outer, inner) = classes_for(outer_role, w_class, q_class);
    let problem = Oriented::new(loss, outer_role);
    match outer {
        FunctionClass::FiniteSet { .. } | FunctionClass::Singleton { .. } => {
            enumerate_outer(&problem, &outer, &inner, outer_role, order)
        }
        _ => lp_outer(&problem, &outer, &inner, outer_role, order),
    }
}

fn members(fc: &FunctionClass) -> Vec<Vec<f64>> {
    match fc {
        FunctionClass::FiniteSet { members } => members.clone(),
        FunctionClass::Singleton { value } => vec![value.clone()],
        _ => unreachable!("members of a convex class"),
    }
}

fn enumerate_outer(
    problem: &Oriented,
    outer: &FunctionClass,
    inner: &FunctionClass,
    outer_role: Role,
    order: SaddleOrder,
) -> Result<SaddleResult> {
    let sign = match order.outer_sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for x in members(outer) {
        let (v, y) = problem.inner_value(&x, inner, order.inner_sense())?;
        if best.as_ref().is_none_or(|(bv, _, _)| sign * v < sign * bv) {
            best = Some((v, x, y));
        }
    }
    let (value, outer_arg, inner_arg) = best.expect("classes are nonempty");
    Ok(SaddleResult {
        value,
        outer_role,
        order,
        outer_arg,
        inner_arg,
        method: SolveMethod::Enumeration,
        lp_status: None,
        pivots: 0,
        certificate_gap: 0.0,
        converged: true,
    })
}

/// Builds the joint LP for a convex outer class. Returns the LP, the outer
/// variable indices and the objective constant.
pub(crate) fn saddle_lp(
    problem: &Oriented,
    outer: &FunctionClass,
    inner: &FunctionClass,
    order: SaddleOrder,
) -> Result<(LinearProgram, Vec<usize>, f64)> {
    let mut lp = LinearProgram::new(order.outer_sense());
    let xvars = add_outer_vars(&mut lp, outer)?;
    for (&v, &a) in xvars.iter().zip(&problem.a) {
        lp.objective[v] += a;
    }
    let lin = problem.m.transpose();
    let constant = match order {
        SaddleOrder::InfSup => {
            let map = AffineMap { c0: &problem.b, lin: &lin, sign: 1.0 };
            let e = add_sup_block(&mut lp, &xvars, &map, inner)?;
            e.add_to_objective(&mut lp, 1.0);
            problem.constant + e.constant
        }
        SaddleOrder::SupInf => {
            // inf_y c.y = -sup_y (-c).y
            let map = AffineMap { c0: &problem.b, lin: &lin, sign: -1.0 };
            let e = add_sup_block(&mut lp, &xvars, &map, inner)?;
            e.add_to_objective(&mut lp, -1.0);
            problem.constant - e.constant
        }
    };
    Ok((lp, xvars, constant))
}

fn lp_outer(
    problem: &Oriented,
    outer: &FunctionClass,
    inner: &FunctionClass,
    outer_role: Role,
    order: SaddleOrder,
) -> Result<SaddleResult> {
    let (lp, xvars, constant) = saddle_lp(problem, outer, inner, order)?;
    let sol = lp_solve(&lp)?;
    check_status(sol.status)?;
    let lp_value = sol.objective + constant;
    let mut x: Vec<f64> = xvars.iter().map(|&v| sol.x[v]).collect();
    project_into(outer, &mut x);
    let (value, y) = problem.inner_value(&x, inner, order.inner_sense())?;
    let gap = (value - lp_value).abs();
    if gap > CERTIFICATE_TOL * 1.0_f64.max(value.abs()) * 100.0 {
        return Err(Error::Invariant(format!(
            "LP optimum {lp_value} and re-evaluated certificate {value} disagree"
        )));
    }
    Ok(SaddleResult {
        value,
        outer_role,
        order,
        outer_arg: x,
        inner_arg: y,
        method: SolveMethod::Lp,
        lp_status: Some(sol.status),
        pivots: sol.pivots,
        certificate_gap: gap,
        converged: true,
    })
}

// ── Grid oracle ─────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GridResult {
    pub result: SaddleResult,
    pub points_per_coord: usize,
    /// Certified bound on `|grid value - true value|`.
    pub resolution: f64,
}

/// Brute force over a regular grid on a box outer class with the inner
/// problem solved in closed form. The resolution is the Lipschitz bound
/// `sum_k (h_k / 2) max_y |a_k + (M y)_k|`.
pub fn grid_saddle(
    loss: &BiAffineLoss,
    w_class: &FunctionClass,
    q_class: &FunctionClass,
    outer_role: Role,
    order: SaddleOrder,
    points_per_coord: usize,
) -> Result<GridResult> {
    loss.check(w_class, q_class)?;
    let (outer, inner) = classes_for(outer_role, w_class, q_class);
    let FunctionClass::Box { lower, upper } = &outer else {
        return Err(Error::InvalidArgument("grid oracle needs a box outer class".into()));
    };
    let dim = lower.len();
    if dim > 4 || points_per_coord < 2 {
        return Err(Error::InvalidArgument("grid oracle supports up to 4 outer dims".into()));
    }
    let problem = Oriented::new(loss, outer_role);
    let (ylo, yhi) = inner.coordinate_ranges()?;
    let ycap: Vec<f64> = ylo.iter().zip(&yhi).map(|(l, h)| l.abs().max(h.abs())).collect();
    let steps: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| (u - l) / (points_per_coord - 1) as f64)
        .collect();
    let resolution: f64 = (0..dim)
        .map(|k| {
            let slope = problem.a[k].abs()
                + (0..ycap.len()).map(|i| problem.m[(k, i)].abs() * ycap[i]).sum::<f64>();
            0.5 * steps[k] * slope
        })
        .sum();

    let sign = match order.outer_sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let total = points_per_coord.pow(dim as u32);
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut x = vec![0.0; dim];
    for code in 0..total {
        let mut c = code;
        for k in 0..dim {
            x[k] = lower[k] + steps[k] * (c % points_per_coord) as f64;
            c /= points_per_coord;
        }
        let (v, y) = problem.inner_value(&x, &inner, order.inner_sense())?;
        if best.as_ref().is_none_or(|(bv, _, _)| sign * v < sign * bv) {
            best = Some((v, x.clone(), y));
        }
    }
    let (value, outer_arg, inner_arg) = best.expect("nonempty grid");
    Ok(GridResult {
        result: SaddleResult {
            value,
            outer_role,
            order,
            outer_arg,
            inner_arg,
            method: SolveMethod::Grid,
            lp_status: None,
            pivots: 0,
            certificate_gap: 0.0,
            converged: true,
        },
        points_per_coord,
        resolution,
    })
}

/// Starts at 9 points per coordinate and halves the spacing until two
/// successive values agree within `stable_tol` or the grid would exceed
/// `max_points` evaluations.
pub fn refined_grid_saddle(
    loss: &BiAffineLoss,
    w_class: &FunctionClass,
    q_class: &FunctionClass,
    outer_role: Role,
    order: SaddleOrder,
    stable_tol: f64,
    max_points: usize,
) -> Result<GridResult> {
    let dim = match outer_role {
        Role::W => w_class.dim(),
        Role::Q => q_class.dim(),
    };
    let mut points = 9;
    let mut current = grid_saddle(loss, w_class, q_class, outer_role, order, points)?;
    loop {
        let next_points = 2 * points - 1;
        if next_points.saturating_pow(dim as u32) > max_points {
            return Ok(current);
        }
        let next = grid_saddle(loss, w_class, q_class, outer_role, order, next_points)?;
        let stable = (next.result.value - current.result.value).abs() <= stable_tol;
        current = next;
        points = next_points;
        if stable {
            return Ok(current);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{generate_random_mdp, importance_weights_for, single_state_mdp, solve_d_pi, solve_q_pi, j_pi, uniform_distribution};

    #[test]
    fn exact_loss_row_identity() {
        let mdp = generate_random_mdp(7, 4, 2, 0.9).unwrap();
        let pi = Policy::random(1, 4, 2);
        let mu = uniform_distribution(8);
        let loss = build_exact_loss(&mdp, &pi, &mu).unwrap();
        let p = state_action_transition(&mdp, &pi);
        for i in 0..8 {
            for j in 0..8 {
                let expect = mu[i] * (0.9 * p[(i, j)] - if i == j { 1.0 } else { 0.0 });
                assert!((loss.k[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truth_makes_loss_constant() {
        let mdp = generate_random_mdp(7, 4, 2, 0.9).unwrap();
        let pi = Policy::random(2, 4, 2);
        let mu = uniform_distribution(8);
        let loss = build_exact_loss(&mdp, &pi, &mu).unwrap();
        let d = solve_d_pi(&mdp, &pi).unwrap();
        let w = importance_weights_for(&mdp, &d.values, &mu).unwrap();
        let q = solve_q_pi(&mdp, &pi).unwrap();
        let j = j_pi(&mdp, &pi).unwrap();
        assert!((loss.evaluate(&w.values, &q.values) - j).abs() < 1e-9);
        let other: Vec<f64> = (0..8).map(|i| i as f64 * 0.3).collect();
        assert!((loss.evaluate(&w.values, &other) - j).abs() < 1e-9);
        assert!((loss.evaluate(&other, &q.values) - j).abs() < 1e-9);
        let decomposed = loss.reward_term(&other) + loss.l_w(&other, &q.values);
        assert!((decomposed - loss.initial_term(&q.values) - loss.l_q(&other, &q.values)).abs() < 1e-12);
    }

    #[test]
    fn singleton_outer_gives_truth() {
        let mdp = single_state_mdp(1.0, 0.5).unwrap();
        let pi = Policy::uniform(1, 1);
        let loss = build_exact_loss(&mdp, &pi, &[1.0]).unwrap();
        let w = FunctionClass::singleton(vec![2.0]);
        let q = FunctionClass::uniform_box(1, 0.0, 5.0).unwrap();
        for order in [SaddleOrder::InfSup, SaddleOrder::SupInf] {
            let r = solve_saddle(&loss, &w, &q, Role::W, order).unwrap();
            assert!((r.value - 2.0).abs() < 1e-12);
            let r = solve_saddle(&loss, &w, &q, Role::Q, order).unwrap();
            assert!((r.value - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn box_box_minimax_equality() {
        let mdp = generate_random_mdp(11, 2, 2, 0.9).unwrap();
        let pi = Policy::random(5, 2, 2);
        let mu = uniform_distribution(4);
        let loss = build_exact_loss(&mdp, &pi, &mu).unwrap();
        let w = FunctionClass::uniform_box(4, 0.0, 8.0).unwrap();
        let q = FunctionClass::uniform_box(4, 0.0, 10.0).unwrap();
        let ub_w = solve_saddle(&loss, &w, &q, Role::W, SaddleOrder::InfSup).unwrap();
        let lb_q = solve_saddle(&loss, &w, &q, Role::Q, SaddleOrder::SupInf).unwrap();
        assert!((ub_w.value - lb_q.value).abs() < 1e-7);
        let lb_w = solve_saddle(&loss, &w, &q, Role::W, SaddleOrder::SupInf).unwrap();
        assert!(lb_w.value <= ub_w.value + 1e-9);
    }

    #[test]
    fn polytope_inner_matches_box_inner_when_equal() {
        let mdp = generate_random_mdp(4, 2, 2, 0.8).unwrap();
        let pi = Policy::random(6, 2, 2);
        let mu = uniform_distribution(4);
        let loss = build_exact_loss(&mdp, &pi, &mu).unwrap();
        let w = FunctionClass::uniform_box(4, 0.0, 3.0).unwrap();
        let q_box = FunctionClass::uniform_box(4, 0.0, 5.0).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..4 {
            let mut row = vec![0.0; 4];
            row[i] = 1.0;
            a.push(row.clone());
            b.push(5.0);
            row[i] = -1.0;
            a.push(row);
            b.push(0.0);
        }
        let q_poly = FunctionClass::polytope(a, b, vec![], vec![]).unwrap();
        for order in [SaddleOrder::InfSup, SaddleOrder::SupInf] {
            for role in [Role::W, Role::Q] {
                let x = solve_saddle(&loss, &w, &q_box, role, order).unwrap();
                let y = solve_saddle(&loss, &w, &q_poly, role, order).unwrap();
                assert!((x.value - y.value).abs() < 1e-8, "{role:?} {order:?}");
            }
        }
    }

    #[test]
    fn grid_brackets_lp() {
        let mdp = generate_random_mdp(11, 2, 1, 0.9).unwrap();
        let pi = Policy::uniform(2, 1);
        let mu = uniform_distribution(2);
        let loss = build_exact_loss(&mdp, &pi, &mu).unwrap();
        let w = FunctionClass::uniform_box(2, 0.0, 4.0).unwrap();
        let q = FunctionClass::uniform_box(2, 0.0, 10.0).unwrap();
        let lp = solve_saddle(&loss, &w, &q, Role::W, SaddleOrder::InfSup).unwrap();
        let grid = refined_grid_saddle(&loss, &w, &q, Role::W, SaddleOrder::InfSup, 1e-8, 1 << 16).unwrap();
        assert!(lp.value <= grid.result.value + 1e-9);
        assert!(grid.result.value - lp.value <= grid.resolution + 1e-9);
    }
}
