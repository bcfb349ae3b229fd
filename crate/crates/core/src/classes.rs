//! Function classes for the value side and the weight side: boxes, bounded
//! polytopes, finite sets and singletons, all over a flat index space.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{lp_solve, LinearProgram, LpStatus, Relation, Sense};
use crate::mdp::TabularMdp;

/// Default membership slack.
pub const CONTAINS_TOL: f64 = 1e-9;

const FORMAT_VERSION: u32 = 1;

/// A set of real vectors of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionClass {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// `{x : A x <= b, E x = f}`.
    Polytope {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default)]
        a_eq: Vec<Vec<f64>>,
        #[serde(default)]
        b_eq: Vec<f64>,
    },
    FiniteSet {
        members: Vec<Vec<f64>>,
    },
    Singleton {
        value: Vec<f64>,
    },
}

// ── Construction ────────────────────────────────────────────────────────

impl FunctionClass {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let fc = Self::Box { lower, upper };
        fc.validate()?;
        Ok(fc)
    }

    pub fn uniform_box(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new_box(vec![lower; dim], vec![upper; dim])
    }

    /// Box of half-width `radius` around `center`.
    pub fn box_around(center: &[f64], radius: f64) -> Result<Self> {
        Self::new_box(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn polytope(a: Vec<Vec<f64>>, b: Vec<f64>, a_eq: Vec<Vec<f64>>, b_eq: Vec<f64>) -> Result<Self> {
        let fc = Self::Polytope { a, b, a_eq, b_eq };
        fc.validate()?;
        Ok(fc)
    }

    pub fn finite(members: Vec<Vec<f64>>) -> Result<Self> {
        let fc = Self::FiniteSet { members };
        fc.validate()?;
        Ok(fc)
    }

    pub fn singleton(value: Vec<f64>) -> Self {
        Self::Singleton { value }
    }

    /// `{w >= 0 : sum_i mu_i w_i = total}`. Bounded only where `mu > 0`;
    /// coordinates with `mu = 0` are pinned to zero.
    pub fn normalized_nonnegative(mu: &[f64], total: f64) -> Result<Self> {
        let n = mu.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut a_eq = vec![mu.to_vec()];
        let mut b_eq = vec![total];
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = -1.0;
            if mu[i] > 0.0 {
                a.push(row);
                b.push(0.0);
            } else {
                row[i] = 1.0;
                a_eq.push(row);
                b_eq.push(0.0);
            }
        }
        Self::polytope(a, b, a_eq, b_eq)
    }

    /// Box intersected with `E_mu[w] = 1`.
    pub fn normalized_box(mu: &[f64], lower: f64, upper: f64) -> Result<Self> {
        let n = mu.len();
        let mut a = Vec::with_capacity(2 * n);
        let mut b = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut up = vec![0.0; n];
            up[i] = 1.0;
            a.push(up);
            b.push(upper);
            let mut lo = vec![0.0; n];
            lo[i] = -1.0;
            a.push(lo);
            b.push(-lower);
        }
        Self::polytope(a, b, vec![mu.to_vec()], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lower, .. } => lower.len(),
            Self::Polytope { a, a_eq, .. } => a
                .first()
                .or(a_eq.first())
                .map_or(0, Vec::len),
            Self::FiniteSet { members } => members.first().map_or(0, Vec::len),
            Self::Singleton { value } => value.len(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Box { .. } => "box",
            Self::Polytope { .. } => "polytope",
            Self::FiniteSet { .. } => "finite_set",
            Self::Singleton { .. } => "singleton",
        }
    }

    /// True when the class equals its own convex hull.
    pub fn is_convex(&self) -> bool {
        match self {
            Self::FiniteSet { members } => members.len() == 1,
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::DimensionMismatch {
                        expected: lower.len(),
                        got: upper.len(),
                    });
                }
                if lower.is_empty() {
                    return Err(Error::InvalidClass("empty index space".into()));
                }
                for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if !(l.is_finite() && u.is_finite()) {
                        return Err(Error::InvalidClass(format!("non-finite bound at {i}")));
                    }
                    if l > u {
                        return Err(Error::InvalidClass(format!("lower {l} > upper {u} at {i}")));
                    }
                }
                Ok(())
            }
            Self::Polytope { a, b, a_eq, b_eq } => {
                let n = self.dim();
                if n == 0 {
                    return Err(Error::InvalidClass("polytope without rows".into()));
                }
                if a.len() != b.len() || a_eq.len() != b_eq.len() {
                    return Err(Error::InvalidClass("row count and rhs length differ".into()));
                }
                if let Some(row) = a.iter().chain(a_eq).find(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: row.len(),
                    });
                }
                for i in 0..n {
                    for sense in [Sense::Maximize, Sense::Minimize] {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        let sol = lp_solve(&self.polytope_lp(&e, sense))?;
                        match sol.status {
                            LpStatus::Optimal => {}
                            LpStatus::Infeasible => return Err(Error::InfeasibleClass),
                            LpStatus::Unbounded => {
                                return Err(Error::InvalidClass(format!(
                                    "polytope unbounded along coordinate {i}"
                                )))
                            }
                        }
                    }
                }
                Ok(())
            }
            Self::FiniteSet { members } => {
                let n = self.dim();
                if members.is_empty() {
                    return Err(Error::InfeasibleClass);
                }
                if n == 0 {
                    return Err(Error::InvalidClass("empty index space".into()));
                }
                if let Some(m) = members.iter().find(|m| m.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: m.len(),
                    });
                }
                Ok(())
            }
            Self::Singleton { value } => {
                if value.is_empty() {
                    return Err(Error::InvalidClass("empty index space".into()));
                }
                Ok(())
            }
        }
    }

    fn polytope_lp(&self, coeff: &[f64], sense: Sense) -> LinearProgram {
        let Self::Polytope { a, b, a_eq, b_eq } = self else {
            unreachable!("polytope_lp on a non-polytope")
        };
        let mut lp = LinearProgram::new(sense);
        for &c in coeff {
            lp.add_var(f64::NEG_INFINITY, f64::INFINITY, c);
        }
        for (row, rhs) in a.iter().zip(b) {
            lp.add_constraint(sparse(row), Relation::Le, *rhs);
        }
        for (row, rhs) in a_eq.iter().zip(b_eq) {
            lp.add_constraint(sparse(row), Relation::Eq, *rhs);
        }
        lp
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

pub(crate) fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ── Membership ──────────────────────────────────────────────────────────

impl FunctionClass {
    /// Membership with infinity-norm slack `tol`.
    pub fn contains(&self, f: &[f64], tol: f64) -> Result<bool> {
        self.check_dim(f.len())?;
        Ok(match self {
            Self::Box { lower, upper } => f
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol),
            Self::Polytope { a, b, a_eq, b_eq } => {
                a.iter().zip(b).all(|(r, rhs)| dot(r, f) <= rhs + tol)
                    && a_eq.iter().zip(b_eq).all(|(r, rhs)| (dot(r, f) - rhs).abs() <= tol)
            }
            Self::FiniteSet { members } => members.iter().any(|m| max_abs_diff(m, f) <= tol),
            Self::Singleton { value } => max_abs_diff(value, f) <= tol,
        })
    }

    /// Membership in the convex hull. Finite sets solve a feasibility LP for
    /// convex weights `lambda` with `|sum_j lambda_j m_j - f|_inf <= tol`.
    pub fn hull_contains(&self, f: &[f64], tol: f64) -> Result<bool> {
        let Self::FiniteSet { members } = self else {
            return self.contains(f, tol);
        };
        self.check_dim(f.len())?;
        let mut lp = LinearProgram::new(Sense::Minimize);
        let lambdas: Vec<usize> = members.iter().map(|_| lp.add_var(0.0, f64::INFINITY, 0.0)).collect();
        lp.add_constraint(lambdas.iter().map(|&j| (j, 1.0)).collect(), Relation::Eq, 1.0);
        for (i, &fi) in f.iter().enumerate() {
            let terms: Vec<(usize, f64)> = lambdas
                .iter()
                .zip(members)
                .filter(|(_, m)| m[i] != 0.0)
                .map(|(&j, m)| (j, m[i]))
                .collect();
            lp.add_constraint(terms.clone(), Relation::Le, fi + tol);
            lp.add_constraint(terms, Relation::Ge, fi - tol);
        }
        Ok(lp_solve(&lp)?.status == LpStatus::Optimal)
    }

    /// `max_{f in class} |f|_inf`.
    pub fn range_cap(&self) -> Result<f64> {
        Ok(match self {
            Self::Box { lower, upper } => lower
                .iter()
                .chain(upper)
                .map(|v| v.abs())
                .fold(0.0, f64::max),
            Self::Polytope { .. } => {
                let n = self.dim();
                let mut cap: f64 = 0.0;
                for i in 0..n {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    let (hi, _) = self.optimize_affine(&e, Sense::Maximize)?;
                    let (lo, _) = self.optimize_affine(&e, Sense::Minimize)?;
                    cap = cap.max(hi.abs()).max(lo.abs());
                }
                cap
            }
            Self::FiniteSet { members } => members
                .iter()
                .flatten()
                .map(|v| v.abs())
                .fold(0.0, f64::max),
            Self::Singleton { value } => value.iter().map(|v| v.abs()).fold(0.0, f64::max),
        })
    }

    /// Coordinatewise `[min, max]` over the class.
    pub fn coordinate_ranges(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        Ok(match self {
            Self::Box { lower, upper } => (lower.clone(), upper.clone()),
            Self::Singleton { value } => (value.clone(), value.clone()),
            Self::FiniteSet { members } => {
                let lo = (0..n)
                    .map(|i| members.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min))
                    .collect();
                let hi = (0..n)
                    .map(|i| members.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                (lo, hi)
            }
            Self::Polytope { .. } => {
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                for i in 0..n {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    hi[i] = self.optimize_affine(&e, Sense::Maximize)?.0;
                    lo[i] = self.optimize_affine(&e, Sense::Minimize)?.0;
                }
                (lo, hi)
            }
        })
    }

    /// A deterministic interior-ish member, used to seed iterative solvers.
    pub fn representative(&self) -> Result<Vec<f64>> {
        Ok(match self {
            Self::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            Self::Singleton { value } => value.clone(),
            Self::FiniteSet { members } => members[0].clone(),
            Self::Polytope { .. } => {
                // Average of the coordinate-extreme vertices lies in the polytope.
                let n = self.dim();
                let mut acc = vec![0.0; n];
                for i in 0..n {
                    for sense in [Sense::Maximize, Sense::Minimize] {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        let (_, x) = self.optimize_affine(&e, sense)?;
                        for (a, v) in acc.iter_mut().zip(&x) {
                            *a += v;
                        }
                    }
                }
                acc.iter().map(|v| v / (2 * n) as f64).collect()
            }
        })
    }
}

// ── Affine optimization ─────────────────────────────────────────────────

impl FunctionClass {
    /// Closed-form `max / min_{f} coeff . f` for boxes, finite sets and
    /// singletons. Zero coefficients pick the lower bound; ties between
    /// members pick the lowest index.
    pub fn vertex_optimum_affine(&self, coeff: &[f64], sense: Sense) -> Result<(f64, Vec<f64>)> {
        self.check_dim(coeff.len())?;
        let sign = match sense {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        };
        match self {
            Self::Box { lower, upper } => {
                let arg: Vec<f64> = coeff
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(c, (l, u))| if sign * c > 0.0 { *u } else { *l })
                    .collect();
                Ok((dot(coeff, &arg), arg))
            }
            Self::FiniteSet { members } => {
                let mut best = 0;
                let mut best_val = dot(coeff, &members[0]);
                for (j, m) in members.iter().enumerate().skip(1) {
                    let v = dot(coeff, m);
                    if sign * v > sign * best_val {
                        best = j;
                        best_val = v;
                    }
                }
                Ok((best_val, members[best].clone()))
            }
            Self::Singleton { value } => Ok((dot(coeff, value), value.clone())),
            Self::Polytope { .. } => Err(Error::InvalidArgument(
                "polytope classes need the LP path".into(),
            )),
        }
    }

    /// `max / min_f coeff . f` over any variant, the LP path for polytopes.
    pub fn optimize_affine(&self, coeff: &[f64], sense: Sense) -> Result<(f64, Vec<f64>)> {
        if !matches!(self, Self::Polytope { .. }) {
            return self.vertex_optimum_affine(coeff, sense);
        }
        self.check_dim(coeff.len())?;
        let sol = lp_solve(&self.polytope_lp(coeff, sense))?;
        match sol.status {
            LpStatus::Optimal => Ok((dot(coeff, &sol.x), sol.x)),
            LpStatus::Infeasible => Err(Error::InfeasibleClass),
            LpStatus::Unbounded => Err(Error::UnboundedObjective),
        }
    }
}

// ── Canonical classes ───────────────────────────────────────────────────

/// `Q = [0, r_max/(1-gamma)]` and `W = [0, w_cap]` on every pair.
pub fn canonical_box_classes(mdp: &TabularMdp, w_cap: f64) -> Result<(FunctionClass, FunctionClass)> {
    if !(w_cap > 0.0) {
        return Err(Error::InvalidArgument(format!("w_cap {w_cap} must be positive")));
    }
    let n = mdp.n_pairs();
    let q = FunctionClass::uniform_box(n, 0.0, mdp.r_max() / (1.0 - mdp.gamma()))?;
    let w = FunctionClass::uniform_box(n, 0.0, w_cap)?;
    Ok((q, w))
}

/// Weight cap `|known pairs| / (1 - gamma)` for the Rmax / Rmin regime.
pub fn rmax_weight_cap(n_known_pairs: usize, gamma: f64) -> f64 {
    n_known_pairs as f64 / (1.0 - gamma)
}

// ── File format ─────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct ClassDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    class: FunctionClass,
}

impl FunctionClass {
    pub fn to_json(&self) -> String {
        let doc = ClassDocument {
            format: "mvi-class".into(),
            version: FORMAT_VERSION,
            class: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ClassDocument = serde_json::from_str(text)?;
        if doc.format != "mvi-class" || doc.version != FORMAT_VERSION {
            return Err(Error::InvalidClass(format!(
                "unsupported document {} v{}",
                doc.format, doc.version
            )));
        }
        doc.class.validate()?;
        Ok(doc.class)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sign_rule_with_zero_tie() {
        let fc = FunctionClass::uniform_box(3, 0.0, 1.0).unwrap();
        let (v, x) = fc.vertex_optimum_affine(&[1.0, -1.0, 0.0], Sense::Maximize).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(x, vec![1.0, 0.0, 0.0]);
        let (v, x) = fc.vertex_optimum_affine(&[1.0, -1.0, 0.0], Sense::Minimize).unwrap();
        assert_eq!(v, -1.0);
        assert_eq!(x, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn singleton_ignores_sense() {
        let fc = FunctionClass::singleton(vec![2.0, -1.0]);
        for sense in [Sense::Maximize, Sense::Minimize] {
            assert_eq!(fc.vertex_optimum_affine(&[1.0, 3.0], sense).unwrap().0, -1.0);
        }
    }

    #[test]
    fn finite_ties_pick_lowest_index() {
        let fc = FunctionClass::finite(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (_, x) = fc.vertex_optimum_affine(&[1.0, 1.0], Sense::Maximize).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
    }

    #[test]
    fn membership_and_hull() {
        let fc = FunctionClass::finite(vec![vec![1.0, 1.0], vec![-1.0, 1.0]]).unwrap();
        assert!(!fc.contains(&[0.0, 1.0], CONTAINS_TOL).unwrap());
        assert!(fc.hull_contains(&[0.0, 1.0], CONTAINS_TOL).unwrap());
        assert!(!fc.hull_contains(&[0.0, 0.5], CONTAINS_TOL).unwrap());
        assert!(fc.contains(&[1.0], CONTAINS_TOL).is_err());
        let b = FunctionClass::uniform_box(2, 0.0, 2.0).unwrap();
        assert!(b.contains(&[0.0, 0.0], CONTAINS_TOL).unwrap());
    }

    #[test]
    fn unbounded_polytope_is_rejected() {
        let nonneg = FunctionClass::polytope(
            vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            vec![0.0, 0.0],
            vec![],
            vec![],
        );
        assert!(matches!(nonneg, Err(Error::InvalidClass(_))));
        let normalized = FunctionClass::normalized_nonnegative(&[0.5, 0.5], 2.0).unwrap();
        assert!(normalized.contains(&[4.0, 0.0], CONTAINS_TOL).unwrap());
        assert!((normalized.range_cap().unwrap() - 4.0).abs() < 1e-9);
        let empty = FunctionClass::polytope(vec![vec![1.0], vec![-1.0]], vec![0.0, -1.0], vec![], vec![]);
        assert!(matches!(empty, Err(Error::InfeasibleClass)));
    }

    #[test]
    fn polytope_optimum_and_representative() {
        let p = FunctionClass::normalized_box(&[0.25, 0.75], 0.0, 2.0).unwrap();
        let (v, x) = p.optimize_affine(&[1.0, 0.0], Sense::Maximize).unwrap();
        assert!((v - 2.0).abs() < 1e-9 && (x[1] - 2.0 / 3.0).abs() < 1e-9);
        let r = p.representative().unwrap();
        assert!(p.contains(&r, 1e-9).unwrap());
    }

    #[test]
    fn canonical_caps() {
        let mdp = crate::mdp::generate_chain(3, 0.0, 0.9).unwrap();
        let (q, _) = canonical_box_classes(&mdp, 1.0).unwrap();
        assert!((q.range_cap().unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(rmax_weight_cap(6, 0.5), 12.0);
    }

    #[test]
    fn json_round_trip() {
        let classes = [
            FunctionClass::uniform_box(2, -1.0, 1.0).unwrap(),
            FunctionClass::normalized_nonnegative(&[0.5, 0.5], 1.0).unwrap(),
            FunctionClass::finite(vec![vec![1.0, 2.0]]).unwrap(),
            FunctionClass::singleton(vec![3.0]),
        ];
        for c in classes {
            assert_eq!(FunctionClass::from_json(&c.to_json()).unwrap(), c);
        }
    }
}
