//! Finite-sample layer: datasets of `(s, a, r, s')` tuples, empirical loss
//! coefficients, bootstrapped intervals and Rademacher confidence addends.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::FunctionClass;
use crate::error::{Error, Result};
use crate::interval::{unified_interval, LossMode, ValueInterval};
use crate::lp::Sense;
use crate::mdp::{Policy, TabularMdp};
use crate::saddle::{check_distribution, BiAffineLoss};

const WEIGHT_SUM_TOL: f64 = 1e-12;

// ── Dataset ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Weighted transitions plus the MDP metadata the loss needs (discount and
/// initial distribution).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    initial: Vec<f64>,
    tuples: Vec<Transition>,
    weights: Vec<f64>,
    source_mu: Option<Vec<f64>>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardNoise {
    None,
    /// Adds `U(-width/2, width/2)` and clips to `[0, r_max]`.
    Uniform { width: f64 },
}

impl Dataset {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        initial: Vec<f64>,
        tuples: Vec<Transition>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if tuples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = tuples.len();
        let weights = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        let ds = Self {
            n_states,
            n_actions,
            gamma,
            initial,
            tuples,
            weights,
            source_mu: None,
            seed: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.tuples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.tuples.len(),
                got: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("tuple weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL * self.tuples.len().max(1) as f64 {
            return Err(Error::InvalidArgument(format!("tuple weights sum to {total}")));
        }
        check_distribution(&self.initial, self.n_states)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {}", self.gamma)));
        }
        for (j, t) in self.tuples.iter().enumerate() {
            if t.s >= self.n_states || t.s_next >= self.n_states || t.a >= self.n_actions {
                return Err(Error::InvalidArgument(format!("tuple {j} index out of range")));
            }
            if !t.r.is_finite() {
                return Err(Error::InvalidArgument(format!("tuple {j} has a non-finite reward")));
            }
        }
        Ok(())
    }

    /// Every `(s, a, s')` with positive probability, weighted by
    /// `mu(s,a) P(s'|s,a)` and paying the mean reward, so the empirical loss
    /// equals the exact one.
    pub fn exhaustive(mdp: &TabularMdp, mu: &[f64]) -> Result<Self> {
        check_distribution(mu, mdp.n_pairs())?;
        let mut tuples = Vec::new();
        let mut weights = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let m = mu[mdp.index(s, a)];
                if m == 0.0 {
                    continue;
                }
                for (s_next, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                    if p > 0.0 {
                        tuples.push(Transition { s, a, r: mdp.reward(s, a), s_next });
                        weights.push(m * p);
                    }
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut ds = Self::new(
            mdp.n_states(),
            mdp.n_actions(),
            mdp.gamma(),
            mdp.initial().to_vec(),
            tuples,
            Some(weights),
        )?;
        ds.source_mu = Some(mu.to_vec());
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Transition] {
        &self.tuples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn source_mu(&self) -> Option<&[f64]> {
        self.source_mu.as_deref()
    }

    /// Weighted frequency of each `(s, a)`.
    pub fn pair_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.n_states * self.n_actions];
        for (t, w) in self.tuples.iter().zip(&self.weights) {
            f[t.s * self.n_actions + t.a] += w;
        }
        f
    }

    /// `n` tuples drawn with replacement in proportion to the weights,
    /// reweighted uniformly.
    pub fn resample(&self, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dist = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::InvalidArgument(format!("resampling weights: {e}")))?;
        let n = self.tuples.len();
        let tuples = (0..n).map(|_| self.tuples[dist.sample(rng)]).collect();
        let mut ds = Self::new(self.n_states, self.n_actions, self.gamma, self.initial.clone(), tuples, None)?;
        ds.source_mu = self.source_mu.clone();
        ds.seed = self.seed;
        Ok(ds)
    }
}

/// `n` i.i.d. tuples: `(s, a) ~ mu`, `s' ~ P(.|s, a)`, reward the mean plus
/// optional clipped uniform noise.
pub fn sample_dataset(mdp: &TabularMdp, mu: &[f64], n: usize, seed: u64, noise: RewardNoise) -> Result<Dataset> {
    check_distribution(mu, mdp.n_pairs())?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair_dist = WeightedIndex::new(mu).map_err(|e| Error::InvalidArgument(format!("mu: {e}")))?;
    let next_dists: Vec<WeightedIndex<f64>> = (0..mdp.n_states())
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| WeightedIndex::new(mdp.next_state_probs(s, a)).expect("validated transition row"))
        .collect();
    let na = mdp.n_actions();
    let tuples = (0..n)
        .map(|_| {
            let pair = pair_dist.sample(&mut rng);
            let (s, a) = (pair / na, pair % na);
            let s_next = next_dists[pair].sample(&mut rng);
            let mean = mdp.reward(s, a);
            let r = match noise {
                RewardNoise::None => mean,
                RewardNoise::Uniform { width } => {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    (mean + width * u).clamp(0.0, mdp.r_max())
                }
            };
            Transition { s, a, r, s_next }
        })
        .collect();
    let mut ds = Dataset::new(mdp.n_states(), na, mdp.gamma(), mdp.initial().to_vec(), tuples, None)?;
    ds.source_mu = Some(mu.to_vec());
    ds.seed = Some(seed);
    Ok(ds)
}

// ── Empirical loss ──────────────────────────────────────────────────────

/// `q(s0, pi) + sum_j weight_j w(s_j,a_j)(r_j + gamma q(s'_j, pi) - q(s_j,a_j))`.
pub fn build_empirical_loss(dataset: &Dataset, policy: &Policy) -> Result<BiAffineLoss> {
    weighted_loss(dataset, policy, &dataset.weights, 1.0)
}

/// Same form with arbitrary per-tuple coefficients and the initial term
/// scaled by `nu_scale`.
fn weighted_loss(dataset: &Dataset, policy: &Policy, coeffs: &[f64], nu_scale: f64) -> Result<BiAffineLoss> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if policy.n_states() != dataset.n_states || policy.n_actions() != dataset.n_actions {
        return Err(Error::InvalidPolicy("policy shape does not match the dataset".into()));
    }
    let na = dataset.n_actions;
    let n = dataset.n_states * na;
    let mut nu = vec![0.0; n];
    for s in 0..dataset.n_states {
        for a in 0..na {
            nu[s * na + a] = nu_scale * dataset.initial[s] * policy.prob(s, a);
        }
    }
    let mut rho = vec![0.0; n];
    let mut k = DMatrix::zeros(n, n);
    for (t, &c) in dataset.tuples.iter().zip(coeffs) {
        let row = t.s * na + t.a;
        rho[row] += c * t.r;
        k[(row, row)] -= c;
        for a2 in 0..na {
            let p = policy.prob(t.s_next, a2);
            if p > 0.0 {
                k[(row, t.s_next * na + a2)] += c * dataset.gamma * p;
            }
        }
    }
    BiAffineLoss::new(nu, rho, k, 0.0)
}

/// Per-tuple loss `q(s0, pi) + w(s,a)(r + gamma q(s', pi) - q(s,a))`.
pub fn tuple_loss(dataset: &Dataset, policy: &Policy, j: usize, w: &[f64], q: &[f64]) -> f64 {
    let na = dataset.n_actions;
    let t = dataset.tuples[j];
    let q0: f64 = (0..dataset.n_states)
        .map(|s| dataset.initial[s] * policy.state_value(q, s))
        .sum();
    q0 + w[t.s * na + t.a] * (t.r + dataset.gamma * policy.state_value(q, t.s_next) - q[t.s * na + t.a])
}

// ── Confidence reports ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ConfidenceMethod {
    Bootstrap { b: usize, k: usize, seed: u64 },
    Rademacher { delta: f64, n_sigma: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detail", rename_all = "snake_case")]
pub enum ConfidenceDetail {
    Bootstrap {
        lows: Vec<f64>,
        highs: Vec<f64>,
    },
    Rademacher {
        complexity: f64,
        complexity_std_error: f64,
        l_max: f64,
        deviation: f64,
        addend: f64,
        /// The complexity sup is found by multi-start alternating ascent,
        /// which is not guaranteed to be global.
        heuristic: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub raw: ValueInterval,
    pub adjusted_low: f64,
    pub adjusted_high: f64,
    pub method: ConfidenceMethod,
    pub detail: ConfidenceDetail,
}

impl ConfidenceReport {
    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.adjusted_low - tol <= value && value <= self.adjusted_high + tol
    }

    pub fn length(&self) -> f64 {
        self.adjusted_high - self.adjusted_low
    }
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ── Bootstrap ───────────────────────────────────────────────────────────

/// Unified interval on `b` tuple-level resamples; the adjusted high is the
/// `k`-th largest resampled high and the adjusted low the `k`-th smallest
/// resampled low.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_interval(
    dataset: &Dataset,
    policy: &Policy,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    b: usize,
    k: usize,
    seed: u64,
) -> Result<ConfidenceReport> {
    if b == 0 || k == 0 || k > b {
        return Err(Error::InvalidArgument(format!("bootstrap needs 1 <= k <= B, got k={k}, B={b}")));
    }
    let raw = unified_interval(&build_empirical_loss(dataset, policy)?, q_class, w_class, LossMode::Empirical)?;
    let runs: Vec<Result<(f64, f64)>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let wrap = |e| Error::Resample { index: i, source: Box::new(e) };
            let mut rng = derived_rng(seed, i as u64);
            let resampled = dataset.resample(&mut rng).map_err(wrap)?;
            let loss = build_empirical_loss(&resampled, policy).map_err(wrap)?;
            let iv = unified_interval(&loss, q_class, w_class, LossMode::Empirical).map_err(wrap)?;
            Ok((iv.low, iv.high))
        })
        .collect();
    let mut lows = Vec::with_capacity(b);
    let mut highs = Vec::with_capacity(b);
    for r in runs {
        let (lo, hi) = r?;
        lows.push(lo);
        highs.push(hi);
    }
    let mut sorted_lows = lows.clone();
    sorted_lows.sort_by(f64::total_cmp);
    let mut sorted_highs = highs.clone();
    sorted_highs.sort_by(|x, y| y.total_cmp(x));
    Ok(ConfidenceReport {
        raw,
        adjusted_low: sorted_lows[k - 1],
        adjusted_high: sorted_highs[k - 1],
        method: ConfidenceMethod::Bootstrap { b, k, seed },
        detail: ConfidenceDetail::Bootstrap { lows, highs },
    })
}

// ── Rademacher ──────────────────────────────────────────────────────────

/// `C_Q + C_W / (1 - gamma) (1 + (1 + gamma) C_Q)`.
pub fn l_max(c_w: f64, c_q: f64, gamma: f64) -> f64 {
    c_q + c_w / (1.0 - gamma) * (1.0 + (1.0 + gamma) * c_q)
}

/// `6 L_max sqrt(log(2/delta) / (2n))`.
pub fn deviation_term(l_max: f64, delta: f64, n: usize) -> f64 {
    6.0 * l_max * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

const ASCENT_STARTS: usize = 8;
const ASCENT_ITERS: usize = 200;

/// `max_{w, q} L(w, q)` by alternating exact maximization over each
/// argument from several starts.
pub fn alternating_max(
    loss: &BiAffineLoss,
    w_class: &FunctionClass,
    q_class: &FunctionClass,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for start in 0..ASCENT_STARTS {
        let mut q = if start == 0 {
            q_class.representative()?
        } else {
            let dir: Vec<f64> = (0..loss.q_dim()).map(|_| rng.random::<f64>() - 0.5).collect();
            q_class.optimize_affine(&dir, Sense::Maximize)?.1
        };
        let mut value = f64::NEG_INFINITY;
        for _ in 0..ASCENT_ITERS {
            // Coefficient of w at fixed q: rho + K q.
            let kq = &loss.k * nalgebra::DVector::from_column_slice(&q);
            let cw: Vec<f64> = loss.rho.iter().zip(kq.iter()).map(|(r, v)| r + v).collect();
            let (_, w) = w_class.optimize_affine(&cw, Sense::Maximize)?;
            let kw = loss.k.tr_mul(&nalgebra::DVector::from_column_slice(&w));
            let cq: Vec<f64> = loss.nu.iter().zip(kw.iter()).map(|(n, v)| n + v).collect();
            let (_, q_next) = q_class.optimize_affine(&cq, Sense::Maximize)?;
            q = q_next;
            let v = loss.evaluate(&w, &q);
            if v <= value + 1e-13 * 1.0_f64.max(v.abs()) {
                value = value.max(v);
                break;
            }
            value = v;
        }
        best = best.max(value);
    }
    Ok(best)
}

/// Raw empirical interval widened by `2 R + 6 L_max sqrt(log(2/delta)/(2n))`
/// on each side, with `R` a Monte Carlo estimate of the empirical
/// Rademacher complexity of the per-tuple losses.
#[allow(clippy::too_many_arguments)]
pub fn rademacher_bound(
    dataset: &Dataset,
    policy: &Policy,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    delta: f64,
    n_sigma: usize,
    seed: u64,
) -> Result<ConfidenceReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must lie in (0, 1)")));
    }
    if n_sigma == 0 {
        return Err(Error::InvalidArgument("n_sigma must be >= 1".into()));
    }
    let raw = unified_interval(&build_empirical_loss(dataset, policy)?, q_class, w_class, LossMode::Empirical)?;
    let (complexity, std_error) = rademacher_complexity(dataset, policy, q_class, w_class, n_sigma, seed)?;
    let lm = l_max(w_class.range_cap()?, q_class.range_cap()?, dataset.gamma);
    let deviation = deviation_term(lm, delta, dataset.len());
    let addend = 2.0 * complexity + deviation;
    Ok(ConfidenceReport {
        adjusted_low: raw.low - addend,
        adjusted_high: raw.high + addend,
        raw,
        method: ConfidenceMethod::Rademacher { delta, n_sigma, seed },
        detail: ConfidenceDetail::Rademacher {
            complexity,
            complexity_std_error: std_error,
            l_max: lm,
            deviation,
            addend,
            heuristic: true,
        },
    })
}

/// Mean over sign draws of `sup_{w,q} sum_j sigma_j weight_j l_j(w,q)`,
/// clamped at zero, and the standard error of the mean.
pub fn rademacher_complexity(
    dataset: &Dataset,
    policy: &Policy,
    q_class: &FunctionClass,
    w_class: &FunctionClass,
    n_sigma: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let sups: Vec<Result<f64>> = (0..n_sigma)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i as u64);
            let coeffs: Vec<f64> = dataset
                .weights
                .iter()
                .map(|w| if rng.random::<bool>() { *w } else { -*w })
                .collect();
            let nu_scale: f64 = coeffs.iter().sum();
            let loss = weighted_loss(dataset, policy, &coeffs, nu_scale)?;
            alternating_max(&loss, w_class, q_class, &mut rng)
        })
        .collect();
    let sups: Vec<f64> = sups.into_iter().collect::<Result<_>>()?;
    let m = n_sigma as f64;
    let mean = sups.iter().sum::<f64>() / m;
    let var = if n_sigma > 1 {
        sups.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok((mean.max(0.0), (var / m).sqrt()))
}

// ── File format ─────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct Row {
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    weight: f64,
}

impl Dataset {
    /// Comment header with `key=value` metadata followed by CSV rows
    /// `s,a,r,s_next,weight`.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# mvi-dataset v1")?;
        writeln!(out, "# n_states={}", self.n_states)?;
        writeln!(out, "# n_actions={}", self.n_actions)?;
        writeln!(out, "# gamma={}", self.gamma)?;
        let init: Vec<String> = self.initial.iter().map(f64::to_string).collect();
        writeln!(out, "# initial={}", init.join(";"))?;
        if let Some(seed) = self.seed {
            writeln!(out, "# seed={seed}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for (t, &weight) in self.tuples.iter().zip(&self.weights) {
            w.serialize(Row { s: t.s, a: t.a, r: t.r, s_next: t.s_next, weight })
                .map_err(|e| Error::InvalidArgument(format!("dataset write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut header = std::collections::BTreeMap::new();
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let field = |k: &str| -> Result<&String> {
            header
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("dataset header lacks {k}")))
        };
        let parse_err = |k: &str| Error::InvalidArgument(format!("dataset header field {k} is malformed"));
        let n_states: usize = field("n_states")?.parse().map_err(|_| parse_err("n_states"))?;
        let n_actions: usize = field("n_actions")?.parse().map_err(|_| parse_err("n_actions"))?;
        let gamma: f64 = field("gamma")?.parse().map_err(|_| parse_err("gamma"))?;
        let initial: Vec<f64> = field("initial")?
            .split(';')
            .map(|v| v.parse().map_err(|_| parse_err("initial")))
            .collect::<Result<_>>()?;
        let seed = match header.get("seed") {
            Some(v) => Some(v.parse().map_err(|_| parse_err("seed"))?),
            None => None,
        };
        let mut tuples = Vec::new();
        let mut weights = Vec::new();
        for row in csv::Reader::from_reader(body.as_bytes()).deserialize::<Row>() {
            let row = row.map_err(|e| Error::InvalidArgument(format!("dataset row: {e}")))?;
            tuples.push(Transition { s: row.s, a: row.a, r: row.r, s_next: row.s_next });
            weights.push(row.weight);
        }
        let mut ds = Self::new(n_states, n_actions, gamma, initial, tuples, Some(weights))?;
        ds.seed = seed;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
