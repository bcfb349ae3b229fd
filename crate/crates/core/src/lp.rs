//! Dense two-phase primal simplex.
//!
//! Problems are stated over variables with (possibly infinite) bounds and
//! linear rows of the form `a . x {<=, >=, =} b`. Internally everything is
//! shifted into equality standard form with nonnegative columns, phase one
//! drives a sum of artificials to zero, and phase two optimizes the real
//! objective. Entering and leaving variables follow Bland's rule, so the
//! solver terminates on degenerate problems and is fully deterministic.
//!
//! The working tableau is periodically rebuilt from the original columns
//! through a fresh LU factorization of the basis, and the final answer is
//! always recomputed that way before reduced costs are certified.

use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Sparse `(variable, coefficient)` pairs.
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective at `x`; NaN unless optimal.
    pub objective: f64,
    pub x: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_pivots: usize,
    /// Reduced-cost optimality tolerance.
    pub optimality_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Phase-one residual above which the problem is declared infeasible.
    pub feasibility_tol: f64,
    /// Rebuild the tableau from scratch every this many pivots.
    pub refactor_every: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_pivots: 1_000_000,
            optimality_tol: 1e-9,
            pivot_tol: 1e-10,
            feasibility_tol: 1e-7,
            refactor_every: 50,
        }
    }
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            constraints: Vec::new(),
        }
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64, objective: f64) -> usize {
        self.objective.push(objective);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            terms,
            relation,
            rhs,
        });
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Plain-text dump for inspection.
    pub fn to_debug_string(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LinearProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.sense {
            Sense::Maximize => "maximize",
            Sense::Minimize => "minimize",
        };
        writeln!(f, "{head}")?;
        let terms: Vec<(usize, f64)> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, c)| (j, *c))
            .collect();
        writeln!(f, "  obj: {}", format_terms(&terms))?;
        writeln!(f, "subject to")?;
        for (i, c) in self.constraints.iter().enumerate() {
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            writeln!(f, "  c{i}: {} {rel} {}", format_terms(&c.terms), c.rhs)?;
        }
        writeln!(f, "bounds")?;
        for j in 0..self.n_vars() {
            writeln!(f, "  {} <= x{j} <= {}", self.lower[j], self.upper[j])?;
        }
        writeln!(f, "end")
    }
}

fn format_terms(terms: &[(usize, f64)]) -> String {
    if terms.is_empty() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (k, (j, a)) in terms.iter().enumerate() {
        if k > 0 {
            out.push_str(if *a < 0.0 { " - " } else { " + " });
            let _ = write!(out, "{} x{j}", a.abs());
        } else {
            let _ = write!(out, "{a} x{j}");
        }
    }
    out
}

// ── Standard-form conversion ────────────────────────────────────────────

/// How an original variable is recovered from standard-form columns:
/// `x = offset + sum(sign * y_col)`.
#[derive(Debug, Clone)]
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

struct StandardForm {
    /// Dense `m x n` equality matrix (structural, slack and artificial columns).
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    /// Phase-two costs in maximization form.
    cost: Vec<f64>,
    n_struct: usize,
    first_artificial: usize,
    initial_basis: Vec<usize>,
    maps: Vec<VarMap>,
}

fn to_standard_form(lp: &LinearProgram) -> Option<StandardForm> {
    let n = lp.n_vars();
    let sign = match lp.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let mut maps = Vec::with_capacity(n);
    let mut n_struct = 0;
    // Extra rows `y <= u - l` for doubly bounded variables.
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l > u {
            return None;
        }
        let map = if l.is_finite() {
            let col = n_struct;
            n_struct += 1;
            if u.is_finite() {
                bound_rows.push((col, u - l));
            }
            VarMap {
                offset: l,
                cols: vec![(col, 1.0)],
            }
        } else if u.is_finite() {
            let col = n_struct;
            n_struct += 1;
            VarMap {
                offset: u,
                cols: vec![(col, -1.0)],
            }
        } else {
            let col = n_struct;
            n_struct += 2;
            VarMap {
                offset: 0.0,
                cols: vec![(col, 1.0), (col + 1, -1.0)],
            }
        };
        maps.push(map);
    }

    // Rows over structural columns, before slacks.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut row = vec![0.0; n_struct];
        let mut rhs = c.rhs;
        for &(j, a) in &c.terms {
            rhs -= a * maps[j].offset;
            for &(col, s) in &maps[j].cols {
                row[col] += a * s;
            }
        }
        rows.push((row, c.relation, rhs));
    }
    for &(col, width) in &bound_rows {
        let mut row = vec![0.0; n_struct];
        row[col] = 1.0;
        rows.push((row, Relation::Le, width));
    }
    for (row, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let n_cols = n_struct + n_slack + n_art;
    let first_artificial = n_struct + n_slack;
    let mut a = vec![vec![0.0; n_cols]; m];
    let mut b = vec![0.0; m];
    let mut initial_basis = vec![0; m];
    let (mut next_slack, mut next_art) = (n_struct, first_artificial);
    for (i, (row, rel, rhs)) in rows.into_iter().enumerate() {
        a[i][..n_struct].copy_from_slice(&row);
        b[i] = rhs;
        match rel {
            Relation::Le => {
                a[i][next_slack] = 1.0;
                initial_basis[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                a[i][next_slack] = -1.0;
                next_slack += 1;
                a[i][next_art] = 1.0;
                initial_basis[i] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                a[i][next_art] = 1.0;
                initial_basis[i] = next_art;
                next_art += 1;
            }
        }
    }

    let mut cost = vec![0.0; n_cols];
    for j in 0..n {
        for &(col, s) in &maps[j].cols {
            cost[col] += sign * lp.objective[j] * s;
        }
    }

    Some(StandardForm {
        a,
        b,
        cost,
        n_struct,
        first_artificial,
        initial_basis,
        maps,
    })
}

// ── Tableau ─────────────────────────────────────────────────────────────

struct Tableau {
    /// `B^{-1} A` with the transformed right-hand side as the last column.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Original rows kept for refactorization.
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    n_cols: usize,
}

enum Step {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let n_cols = sf.cost.len();
        let t = sf
            .a
            .iter()
            .zip(&sf.b)
            .map(|(row, &rhs)| {
                let mut r = row.clone();
                r.push(rhs);
                r
            })
            .collect();
        Self {
            t,
            basis: sf.initial_basis.clone(),
            a: sf.a.clone(),
            b: sf.b.clone(),
            n_cols,
        }
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.n_cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        self.t[row].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let factor = r[col];
            if factor != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Rebuilds `B^{-1} [A | b]` from the original rows. Returns false if the
    /// basis matrix is numerically singular, in which case the tableau is left
    /// untouched.
    fn refactor(&mut self) -> bool {
        let m = self.basis.len();
        if m == 0 {
            return true;
        }
        let bmat = DMatrix::from_fn(m, m, |i, k| self.a[i][self.basis[k]]);
        let lu = bmat.lu();
        let rhs = DMatrix::from_fn(m, self.n_cols + 1, |i, j| {
            if j < self.n_cols {
                self.a[i][j]
            } else {
                self.b[i]
            }
        });
        let Some(sol) = lu.solve(&rhs) else {
            return false;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for i in 0..m {
            for j in 0..=self.n_cols {
                self.t[i][j] = sol[(i, j)];
            }
            // Basic columns are exact unit vectors by definition.
            for (k, &bcol) in self.basis.iter().enumerate() {
                self.t[i][bcol] = if k == i { 1.0 } else { 0.0 };
            }
        }
        true
    }

    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        let mut d = cost[j];
        for (i, &bc) in self.basis.iter().enumerate() {
            d -= cost[bc] * self.t[i][j];
        }
        d
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(i, &bc)| cost[bc] * self.rhs(i))
            .sum()
    }

    /// Maximizes `cost . y` over columns `j < allowed`, Bland's rule.
    fn optimize(
        &mut self,
        cost: &[f64],
        allowed: usize,
        opts: &SimplexOptions,
        pivots: &mut usize,
    ) -> Result<Step> {
        let mut since_refactor = 0;
        let mut is_basic = vec![false; self.n_cols];
        loop {
            is_basic.iter_mut().for_each(|v| *v = false);
            for &bc in &self.basis {
                is_basic[bc] = true;
            }
            let entering = (0..allowed)
                .find(|&j| !is_basic[j] && self.reduced_cost(cost, j) > opts.optimality_tol);
            let Some(col) = entering else {
                // Certify on a freshly factored tableau before accepting.
                if since_refactor > 0 && self.refactor() {
                    since_refactor = 0;
                    continue;
                }
                return Ok(Step::Optimal);
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.basis.len() {
                let piv = self.t[i][col];
                if piv <= opts.pivot_tol {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / piv;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if ratio < best && !tie || tie && self.basis[i] < self.basis[r] {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((row, _)) = leave else {
                return Ok(Step::Unbounded);
            };

            self.pivot(row, col);
            *pivots += 1;
            since_refactor += 1;
            if *pivots > opts.max_pivots {
                return Err(Error::IterationLimit(opts.max_pivots));
            }
            if since_refactor >= opts.refactor_every && self.refactor() {
                since_refactor = 0;
            }
        }
    }

    fn remove_row(&mut self, i: usize) {
        self.t.remove(i);
        self.basis.remove(i);
        self.a.remove(i);
        self.b.remove(i);
    }
}

// ── Driver ──────────────────────────────────────────────────────────────

pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp_solve_with(lp, &SimplexOptions::default())
}

pub fn lp_solve_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    let infeasible = |pivots| LpSolution {
        status: LpStatus::Infeasible,
        objective: f64::NAN,
        x: Vec::new(),
        pivots,
    };
    let Some(sf) = to_standard_form(lp) else {
        return Ok(infeasible(0));
    };
    let mut tab = Tableau::new(&sf);
    let n_cols = sf.cost.len();
    let mut pivots = 0;

    // Phase one: maximize minus the sum of artificials.
    if sf.first_artificial < n_cols {
        let phase1: Vec<f64> = (0..n_cols)
            .map(|j| if j >= sf.first_artificial { -1.0 } else { 0.0 })
            .collect();
        tab.optimize(&phase1, n_cols, opts, &mut pivots)?;
        let scale = 1.0 + sf.b.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if -tab.objective(&phase1) > opts.feasibility_tol * scale {
            return Ok(infeasible(pivots));
        }
        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.basis.len() {
            if tab.basis[i] >= sf.first_artificial {
                let col = (0..sf.first_artificial)
                    .filter(|j| !tab.basis.contains(j))
                    .find(|&j| tab.t[i][j].abs() > 1e-9);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        pivots += 1;
                    }
                    None => {
                        tab.remove_row(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        tab.refactor();
    }

    // Phase two over structural and slack columns only.
    match tab.optimize(&sf.cost, sf.first_artificial, opts, &mut pivots)? {
        Step::Unbounded => {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                objective: match lp.sense {
                    Sense::Maximize => f64::INFINITY,
                    Sense::Minimize => f64::NEG_INFINITY,
                },
                x: Vec::new(),
                pivots,
            })
        }
        Step::Optimal => {}
    }

    let mut y = vec![0.0; n_cols];
    for (i, &bc) in tab.basis.iter().enumerate() {
        y[bc] = tab.rhs(i).max(0.0);
    }
    let x: Vec<f64> = sf
        .maps
        .iter()
        .map(|m| m.offset + m.cols.iter().map(|&(c, s)| s * y[c]).sum::<f64>())
        .collect();
    debug_assert!(sf.n_struct <= sf.first_artificial);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.evaluate(&x),
        x,
        pivots,
    })
}
