use std::path::{Path, PathBuf};
use std::time::Instant;

use minimax_interval::classes::{canonical_box_classes, rmax_weight_cap};
use minimax_interval::empirical::{
    bootstrap_interval, build_empirical_loss, rademacher_bound, sample_dataset, ConfidenceReport, Dataset,
    RewardNoise,
};
use minimax_interval::interval::{
    all_bounds, behavior_aware_bounds, bound, build_average_reward_loss, naive_interval, point_estimate,
    regularized_interval, unified_interval, BoundKind, FourBounds, LossMode, NaiveStyle, ValueInterval,
    MINIMAX_TOL, REVERSAL_TOL, SOLVER_TOL,
};
use minimax_interval::mdp::{
    behavior_distribution, generate_chain, generate_random_mdp, importance_weights_for, j_pi, single_state_mdp,
    solve_d_pi, solve_differential_q, solve_q_pi, stationary_distribution, uniform_distribution,
};
use minimax_interval::policy_opt::{
    ipm_diagnostic, optimize_policy, rmax_equivalence_check, OptimizationMode, PolicyClass,
};
use minimax_interval::saddle::{build_exact_loss, BiAffineLoss, CERTIFICATE_TOL};
use minimax_interval::{FunctionClass, Policy, TabularMdp};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{
    ClassSpec, ConfidenceSpec, DataSpec, Diagnostic, ExperimentConfig, ExperimentKind, MdpSource, ModeSpec,
    Objective, PolicyClassSpec, PolicySource, SweepAxis,
};

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration{}: {}", at(.config), join(.diagnostics))]
    Validation { config: Option<PathBuf>, diagnostics: Vec<Diagnostic> },
    #[error("{stage} failed{}: {source}", at(.config))]
    Solver {
        stage: &'static str,
        config: Option<PathBuf>,
        #[source]
        source: minimax_interval::Error,
    },
    #[error("cannot access {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn at(config: &Option<PathBuf>) -> String {
    config.as_ref().map(|p| format!(" in {}", p.display())).unwrap_or_default()
}

fn join(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation { .. } => 2,
            Self::Solver { .. } | Self::Io { .. } => 3,
        }
    }
}

// ── Options and outputs ─────────────────────────────────────────────────

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where to write `result.json` and `table.csv`. Nothing is written
    /// when neither this nor the config names a directory.
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub emit_certificates: bool,
    /// Used to resolve relative paths and in error messages.
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub document: Value,
    pub table: Option<String>,
    pub written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Tolerances {
    solver: f64,
    reversal: f64,
    minimax: f64,
    certificate: f64,
}

pub const RESULT_FILE: &str = "result.json";
pub const TABLE_FILE: &str = "table.csv";

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    certificates: bool,
    base: PathBuf,
    config: Option<PathBuf>,
}

impl Ctx<'_> {
    fn solver<T>(&self, stage: &'static str, r: minimax_interval::Result<T>) -> Result<T, CliError> {
        r.map_err(|source| CliError::Solver { stage, config: self.config.clone(), source })
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn interval(&self, iv: ValueInterval) -> ValueInterval {
        if self.certificates {
            iv
        } else {
            iv.without_certificates()
        }
    }

    fn bounds(&self, b: FourBounds) -> FourBounds {
        if self.certificates {
            b
        } else {
            FourBounds {
                ub_w: b.ub_w.without_certificates(),
                lb_w: b.lb_w.without_certificates(),
                ub_q: b.ub_q.without_certificates(),
                lb_q: b.lb_q.without_certificates(),
            }
        }
    }
}

/// Runs a validated experiment and writes its outputs.
pub fn run(cfg: &ExperimentConfig, config_text: &str, opts: &RunOptions) -> Result<RunOutput, CliError> {
    let diagnostics = crate::config::validate(cfg);
    if !diagnostics.is_empty() {
        return Err(CliError::Validation { config: opts.config_path.clone(), diagnostics });
    }
    let start = Instant::now();
    let jobs = opts.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let ctx = Ctx {
        cfg,
        seed: opts.seed.unwrap_or(cfg.seed),
        certificates: opts.emit_certificates || cfg.output.certificates,
        base: opts
            .config_path
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default(),
        config: opts.config_path.clone(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool construction");
    log::info!("running {} with {jobs} jobs", cfg.kind.name());
    let (result, table) = pool.install(|| match cfg.kind {
        ExperimentKind::Eval => run_eval(&ctx),
        ExperimentKind::Sweep => run_sweep(&ctx),
        ExperimentKind::Coverage => run_coverage(&ctx),
        ExperimentKind::PolicyOpt => run_policy_opt(&ctx),
        ExperimentKind::RmaxCheck => run_rmax(&ctx),
        ExperimentKind::AvgReward => run_avg_reward(&ctx),
        ExperimentKind::BehaviorAware => run_behavior(&ctx),
    })?;
    let document = json!({
        "tool": "mvi",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.kind.name(),
        "config_sha256": config_hash(config_text),
        "seed": ctx.seed,
        "jobs": jobs,
        "tolerances": Tolerances {
            solver: SOLVER_TOL,
            reversal: REVERSAL_TOL,
            minimax: MINIMAX_TOL,
            certificate: CERTIFICATE_TOL,
        },
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "table": table.as_ref().map(|_| TABLE_FILE),
        "result": result,
    });
    let mut written = Vec::new();
    if let Some(dir) = opts.out_dir.clone().or_else(|| cfg.output.dir.as_ref().map(|d| ctx.path(d))) {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let doc_path = dir.join(RESULT_FILE);
        let text = serde_json::to_string_pretty(&document).expect("serializable document");
        std::fs::write(&doc_path, text + "\n").map_err(io(&doc_path))?;
        written.push(doc_path);
        if let Some(t) = &table {
            let p = dir.join(TABLE_FILE);
            std::fs::write(&p, t).map_err(io(&p))?;
            written.push(p);
        }
    }
    Ok(RunOutput { document, table, written })
}

// ── Building blocks ─────────────────────────────────────────────────────

fn load_mdp(ctx: &Ctx) -> Result<TabularMdp, CliError> {
    let r = match &ctx.cfg.mdp {
        MdpSource::File { path } => TabularMdp::load(ctx.path(path)),
        MdpSource::Random { n_states, n_actions, gamma, seed } => generate_random_mdp(*seed, *n_states, *n_actions, *gamma),
        MdpSource::Chain { length, slip, gamma } => generate_chain(*length, *slip, *gamma),
        MdpSource::SingleState { reward, gamma } => single_state_mdp(*reward, *gamma),
    };
    ctx.solver("mdp", r)
}

fn load_policy(ctx: &Ctx, src: &PolicySource, mdp: &TabularMdp) -> Result<Policy, CliError> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let r = match src {
        PolicySource::File { path } => Policy::load(ctx.path(path)),
        PolicySource::Uniform => Ok(Policy::uniform(ns, na)),
        PolicySource::Random { seed } => Ok(Policy::random(*seed, ns, na)),
        PolicySource::Deterministic { actions } => Policy::deterministic(actions, na),
    };
    let pi = ctx.solver("mdp", r)?;
    ctx.solver("mdp", pi.check_shape(mdp))?;
    Ok(pi)
}

fn target_policy(ctx: &Ctx, mdp: &TabularMdp) -> Result<Policy, CliError> {
    load_policy(ctx, ctx.cfg.policy.as_ref().expect("validated"), mdp)
}

fn data_distribution(ctx: &Ctx, mdp: &TabularMdp) -> Result<Vec<f64>, CliError> {
    let n = mdp.n_pairs();
    match &ctx.cfg.data {
        DataSpec::Uniform => Ok(uniform_distribution(n)),
        DataSpec::Behavior { policy } => {
            let b = load_policy(ctx, policy, mdp)?;
            ctx.solver("mdp", behavior_distribution(mdp, &b))
        }
        DataSpec::KnownStates { states } => {
            let na = mdp.n_actions();
            let mut mu = vec![0.0; n];
            for &s in states {
                if s >= mdp.n_states() {
                    return Err(validation(ctx, "data.states", format!("state {s} out of range")));
                }
                for a in 0..na {
                    mu[mdp.index(s, a)] = 1.0 / (states.len() * na) as f64;
                }
            }
            Ok(mu)
        }
        DataSpec::Explicit { values } => {
            if values.len() != n {
                return Err(validation(ctx, "data.values", format!("expected {n} entries, got {}", values.len())));
            }
            Ok(values.clone())
        }
    }
}

fn validation(ctx: &Ctx, field: &str, message: String) -> CliError {
    CliError::Validation {
        config: ctx.config.clone(),
        diagnostics: vec![Diagnostic { field: field.into(), message }],
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Builds a class, resolving `truth_*` forms against `truth`. `normalize`
/// turns a `truth_cap` weight box into `{w in box : E_mu[w] = 1}`.
fn build_class(
    ctx: &Ctx,
    spec: &ClassSpec,
    dim: usize,
    truth: Option<&[f64]>,
    normalize: Option<&[f64]>,
) -> Result<FunctionClass, CliError> {
    let need_truth = || truth.ok_or_else(|| validation(ctx, "class", "no reference function for a truth-based class".into()));
    let r = match spec {
        ClassSpec::File { path } => FunctionClass::load(ctx.path(path)),
        ClassSpec::Inline { class } => class.validate().map(|_| class.clone()),
        ClassSpec::UniformBox { lower, upper } => FunctionClass::uniform_box(dim, *lower, *upper),
        ClassSpec::TruthBox { radius, shift } => {
            let c: Vec<f64> = need_truth()?.iter().map(|v| v + shift).collect();
            FunctionClass::box_around(&c, *radius)
        }
        ClassSpec::TruthCap { factor } => {
            let cap = factor * max_of(need_truth()?);
            match normalize {
                Some(mu) => FunctionClass::normalized_box(mu, 0.0, cap),
                None => FunctionClass::uniform_box(dim, 0.0, cap),
            }
        }
        ClassSpec::TruthSingleton => Ok(FunctionClass::singleton(need_truth()?.to_vec())),
    };
    let class = ctx.solver("classes", r)?;
    if class.dim() != dim {
        return Err(validation(ctx, "class", format!("class dimension {} does not match {dim}", class.dim())));
    }
    Ok(class)
}

struct Truth {
    q: Vec<f64>,
    w: Vec<f64>,
    j: f64,
}

fn discounted_truth(ctx: &Ctx, mdp: &TabularMdp, pi: &Policy, mu: &[f64]) -> Result<Truth, CliError> {
    let q = ctx.solver("mdp", solve_q_pi(mdp, pi))?.values;
    let d = ctx.solver("mdp", solve_d_pi(mdp, pi))?;
    let w = ctx.solver("mdp", importance_weights_for(mdp, &d.values, mu))?.values;
    let j = ctx.solver("mdp", j_pi(mdp, pi))?;
    Ok(Truth { q, w, j })
}

fn classes(ctx: &Ctx, n: usize, truth: &Truth, normalize: Option<&[f64]>) -> Result<(FunctionClass, FunctionClass), CliError> {
    let q = build_class(ctx, ctx.cfg.q_class.as_ref().expect("validated"), n, Some(&truth.q), None)?;
    let w = build_class(ctx, ctx.cfg.w_class.as_ref().expect("validated"), n, Some(&truth.w), normalize)?;
    Ok((q, w))
}

fn noise(width: f64) -> RewardNoise {
    if width > 0.0 {
        RewardNoise::Uniform { width }
    } else {
        RewardNoise::None
    }
}

fn dataset(ctx: &Ctx, mdp: &TabularMdp, mu: &[f64]) -> Result<Option<Dataset>, CliError> {
    match &ctx.cfg.mode {
        ModeSpec::Exact => Ok(None),
        ModeSpec::Empirical { dataset: Some(path), .. } => Ok(Some(ctx.solver("empirical", Dataset::load(ctx.path(path)))?)),
        ModeSpec::Empirical { n, seed, noise_width, .. } => {
            let ds = sample_dataset(mdp, mu, n.expect("validated"), seed.unwrap_or(ctx.seed), noise(*noise_width));
            Ok(Some(ctx.solver("empirical", ds)?))
        }
    }
}

fn loss_for(ctx: &Ctx, mdp: &TabularMdp, pi: &Policy, mu: &[f64], ds: Option<&Dataset>) -> Result<(BiAffineLoss, LossMode), CliError> {
    match ds {
        None => Ok((ctx.solver("interval", build_exact_loss(mdp, pi, mu))?, LossMode::Exact)),
        Some(ds) => Ok((ctx.solver("empirical", build_empirical_loss(ds, pi))?, LossMode::Empirical)),
    }
}

fn confidence(
    ctx: &Ctx,
    ds: &Dataset,
    pi: &Policy,
    q: &FunctionClass,
    w: &FunctionClass,
    seed: u64,
) -> Result<Option<ConfidenceReport>, CliError> {
    let r = match ctx.cfg.confidence {
        ConfidenceSpec::None => return Ok(None),
        ConfidenceSpec::Bootstrap { b, k } => bootstrap_interval(ds, pi, q, w, b, k, seed),
        ConfidenceSpec::Rademacher { delta, n_sigma } => rademacher_bound(ds, pi, q, w, delta, n_sigma, seed),
    };
    ctx.solver("empirical", r).map(Some)
}

fn csv_table<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

// ── Experiments ─────────────────────────────────────────────────────────

type Outcome = Result<(Value, Option<String>), CliError>;

fn run_eval(ctx: &Ctx) -> Outcome {
    let mdp = load_mdp(ctx)?;
    let pi = target_policy(ctx, &mdp)?;
    let mu = data_distribution(ctx, &mdp)?;
    let truth = discounted_truth(ctx, &mdp, &pi, &mu)?;
    let (q, w) = classes(ctx, mdp.n_pairs(), &truth, None)?;
    let ds = dataset(ctx, &mdp, &mu)?;
    let (loss, mode) = loss_for(ctx, &mdp, &pi, &mu, ds.as_ref())?;
    let iv = ctx.solver("interval", unified_interval(&loss, &q, &w, mode))?;
    let bounds = ctx.solver("interval", all_bounds(&loss, &q, &w, mode))?;
    let mut naive = serde_json::Map::new();
    if ctx.cfg.eval.naive {
        for (name, style) in [("mwl", NaiveStyle::Mwl), ("mql", NaiveStyle::Mql)] {
            let n = ctx.solver("interval", naive_interval(style, &loss, &q, &w, mode))?;
            naive.insert(name.into(), serde_json::to_value(ctx.interval(n)).expect("serializable"));
        }
    }
    let reg_mu = ds.as_ref().map_or_else(|| mu.clone(), Dataset::pair_frequencies);
    let regularized = ctx
        .cfg
        .eval
        .regularizers
        .iter()
        .map(|r| ctx.solver("regularized", regularized_interval(&loss, &q, &w, &reg_mu, *r, mode)).map(|iv| ctx.interval(iv)))
        .collect::<Result<Vec<_>, _>>()?;
    let conf = match &ds {
        Some(ds) => confidence(ctx, ds, &pi, &q, &w, ctx.seed)?,
        None => None,
    };
    let point = point_estimate(&iv);
    let result = json!({
        "truth": truth.j,
        "interval": ctx.interval(iv),
        "point": point,
        "bounds": ctx.bounds(bounds),
        "naive": naive,
        "regularized": regularized,
        "confidence": conf.map(|mut c| {
            if !ctx.certificates {
                c.raw = c.raw.without_certificates();
            }
            c
        }),
        "dataset_size": ds.as_ref().map(Dataset::len),
    });
    Ok((result, None))
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    ub_w: f64,
    lb_w: f64,
    ub_q: f64,
    lb_q: f64,
    low: f64,
    high: f64,
    reversed: bool,
    diagnosis: String,
    q_gap: f64,
    truth: f64,
}

/// Sign changes of a sequence, ignoring entries within `tol` of zero.
pub fn sign_changes(values: &[f64], tol: f64) -> usize {
    let signs: Vec<bool> = values.iter().filter(|v| v.abs() > tol).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|p| p[0] != p[1]).count()
}

fn run_sweep(ctx: &Ctx) -> Outcome {
    let spec = ctx.cfg.sweep.as_ref().expect("validated");
    let mdp = load_mdp(ctx)?;
    let pi = target_policy(ctx, &mdp)?;
    let mu = data_distribution(ctx, &mdp)?;
    let truth = discounted_truth(ctx, &mdp, &pi, &mu)?;
    let ds = dataset(ctx, &mdp, &mu)?;
    let (loss, mode) = loss_for(ctx, &mdp, &pi, &mu, ds.as_ref())?;
    let n = mdp.n_pairs();
    let rows: Vec<SweepRow> = spec
        .values
        .par_iter()
        .map(|&value| {
            let (q_spec, w_spec) = match (spec.axis, ctx.cfg.q_class.clone(), ctx.cfg.w_class.clone()) {
                (SweepAxis::QRadius, Some(ClassSpec::TruthBox { shift, .. }), Some(w)) => {
                    (ClassSpec::TruthBox { radius: value, shift }, w)
                }
                (SweepAxis::WFactor, Some(q), Some(ClassSpec::TruthCap { .. })) => (q, ClassSpec::TruthCap { factor: value }),
                _ => unreachable!("validated"),
            };
            let q = build_class(ctx, &q_spec, n, Some(&truth.q), None)?;
            let w = build_class(ctx, &w_spec, n, Some(&truth.w), None)?;
            let b = ctx.solver("interval", all_bounds(&loss, &q, &w, mode))?;
            let iv = ctx.solver("interval", unified_interval(&loss, &q, &w, mode))?;
            Ok(SweepRow {
                value,
                ub_w: b.ub_w.value,
                lb_w: b.lb_w.value,
                ub_q: b.ub_q.value,
                lb_q: b.lb_q.value,
                low: iv.low,
                high: iv.high,
                reversed: iv.reversed,
                diagnosis: format!("{:?}", iv.diagnosis),
                q_gap: b.ub_q.value - b.lb_q.value,
                truth: truth.j,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let gaps: Vec<f64> = rows.iter().map(|r| r.q_gap).collect();
    let tol = REVERSAL_TOL * gaps.iter().fold(1.0_f64, |m, g| m.max(g.abs()));
    let result = json!({
        "axis": spec.axis,
        "points": rows.len(),
        "truth": truth.j,
        "q_gap_sign_changes": sign_changes(&gaps, tol),
        "reversed_points": rows.iter().filter(|r| r.reversed).count(),
    });
    Ok((result, Some(csv_table(&rows))))
}

#[derive(Serialize)]
struct CoverageRow {
    trial: usize,
    raw_low: f64,
    raw_high: f64,
    adjusted_low: f64,
    adjusted_high: f64,
    raw_covers: bool,
    adjusted_covers: bool,
}

fn run_coverage(ctx: &Ctx) -> Outcome {
    let spec = ctx.cfg.coverage.as_ref().expect("validated");
    let mdp = load_mdp(ctx)?;
    let pi = target_policy(ctx, &mdp)?;
    let mu = data_distribution(ctx, &mdp)?;
    let truth = discounted_truth(ctx, &mdp, &pi, &mu)?;
    let (q, w) = classes(ctx, mdp.n_pairs(), &truth, None)?;
    let exact_loss = ctx.solver("interval", build_exact_loss(&mdp, &pi, &mu))?;
    let exact = ctx.solver("interval", unified_interval(&exact_loss, &q, &w, LossMode::Exact))?;
    let tol = 1e-9;
    let rows: Vec<CoverageRow> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let data_seed = ctx.seed.wrapping_mul(1_000_003).wrapping_add(trial as u64);
            let ds = ctx.solver("empirical", sample_dataset(&mdp, &mu, spec.n, data_seed, noise(spec.noise_width)))?;
            let rep = confidence(ctx, &ds, &pi, &q, &w, data_seed ^ 0x9e37_79b9_7f4a_7c15)?.expect("validated");
            Ok(CoverageRow {
                trial,
                raw_low: rep.raw.low,
                raw_high: rep.raw.high,
                adjusted_low: rep.adjusted_low,
                adjusted_high: rep.adjusted_high,
                raw_covers: rep.raw.contains(truth.j, tol),
                adjusted_covers: rep.contains(truth.j, tol),
            })
        })
        .collect::<Result<_, CliError>>()?;
    let m = rows.len() as f64;
    let raw_cov = rows.iter().filter(|r| r.raw_covers).count() as f64 / m;
    let adj_cov = rows.iter().filter(|r| r.adjusted_covers).count() as f64 / m;
    let raw_len = rows.iter().map(|r| r.raw_high - r.raw_low).sum::<f64>() / m;
    let adj_len = rows.iter().map(|r| r.adjusted_high - r.adjusted_low).sum::<f64>() / m;
    let result = json!({
        "truth": truth.j,
        "exact_interval": [exact.low, exact.high],
        "exact_length": exact.length(),
        "trials": rows.len(),
        "n": spec.n,
        "raw_coverage": raw_cov,
        "adjusted_coverage": adj_cov,
        "mean_raw_length": raw_len,
        "mean_adjusted_length": adj_len,
        "length_ratio": if exact.length() > 0.0 { Some(adj_len / exact.length()) } else { None },
    });
    Ok((result, Some(csv_table(&rows))))
}

#[derive(Serialize)]
struct PolicyRow {
    index: usize,
    objective: f64,
    truth: f64,
    chosen: bool,
}

fn run_policy_opt(ctx: &Ctx) -> Outcome {
    let spec = ctx.cfg.policy_opt.as_ref().expect("validated");
    let mdp = load_mdp(ctx)?;
    let mu = data_distribution(ctx, &mdp)?;
    let class = match &spec.policies {
        PolicyClassSpec::AllDeterministic => PolicyClass::all_deterministic(&mdp),
        PolicyClassSpec::List { policies } => {
            let list = policies.iter().map(|p| load_policy(ctx, p, &mdp)).collect::<Result<Vec<_>, _>>()?;
            ctx.solver("policy_opt", PolicyClass::new(list))?
        }
    };
    let n = mdp.n_pairs();
    let q = build_class(ctx, ctx.cfg.q_class.as_ref().expect("validated"), n, None, None)?;
    let w = build_class(ctx, ctx.cfg.w_class.as_ref().expect("validated"), n, None, None)?;
    let ds = dataset(ctx, &mdp, &mu)?;
    let source = match &ds {
        None => minimax_interval::interval::LossSource::Exact { mdp: &mdp, mu: &mu },
        Some(ds) => minimax_interval::interval::LossSource::Empirical { dataset: ds },
    };
    let mode = match spec.objective {
        Objective::MlbPo => OptimizationMode::MlbPo,
        Objective::MubPo => OptimizationMode::MubPo,
        Objective::MlbPoQside => OptimizationMode::MlbPoQside,
    };
    let mut out = ctx.solver("policy_opt", optimize_policy(mode, source, &class, &q, &w))?;
    if spec.ipm {
        let kind = match mode {
            OptimizationMode::MlbPo => BoundKind::LbW,
            OptimizationMode::MubPo => BoundKind::UbW,
            OptimizationMode::MlbPoQside => BoundKind::LbQ,
        };
        let loss = ctx.solver("interval", source.loss(&out.chosen_policy))?;
        let b = ctx.solver("interval", bound(kind, &loss, &q, &w, source.mode()))?;
        let w_cert = b.w_certificate.expect("saddle bounds carry certificates");
        let data_mu = source.data_distribution();
        out.ipm_report = Some(ctx.solver("policy_opt", ipm_diagnostic(&mdp, &w_cert, &data_mu, &out.chosen_policy, &q, &class))?);
    }
    let truths = class
        .policies()
        .iter()
        .map(|p| ctx.solver("mdp", j_pi(&mdp, p)))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<PolicyRow> = out
        .objective_values
        .iter()
        .zip(&truths)
        .enumerate()
        .map(|(index, (o, t))| PolicyRow { index, objective: *o, truth: *t, chosen: index == out.chosen_index })
        .collect();
    let best_truth = truths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let result = json!({
        "outcome": out,
        "chosen_truth": truths[out.chosen_index],
        "best_truth_in_class": best_truth,
    });
    Ok((result, Some(csv_table(&rows))))
}

fn run_rmax(ctx: &Ctx) -> Outcome {
    let spec = ctx.cfg.rmax.as_ref().expect("validated");
    let mdp = load_mdp(ctx)?;
    let class = PolicyClass::all_deterministic(&mdp);
    let report = ctx.solver("policy_opt", rmax_equivalence_check(&mdp, &spec.known_states, &class))?;
    let (q, w) = ctx.solver(
        "classes",
        canonical_box_classes(&mdp, rmax_weight_cap(spec.known_states.len() * mdp.n_actions(), mdp.gamma())),
    )?;
    let table = csv_table(&report.rows);
    let result = json!({
        "policies": class.len(),
        "q_class": q,
        "w_class": w,
        "report": report,
    });
    Ok((result, Some(table)))
}

fn run_avg_reward(ctx: &Ctx) -> Outcome {
    let mdp = load_mdp(ctx)?;
    let pi = target_policy(ctx, &mdp)?;
    let mu = data_distribution(ctx, &mdp)?;
    let d = ctx.solver("mdp", stationary_distribution(&mdp, &pi))?;
    let (j, q_diff) = ctx.solver("mdp", solve_differential_q(&mdp, &pi))?;
    let w_true = ctx.solver("mdp", importance_weights_for(&mdp, &d.values, &mu))?.values;
    let truth = Truth { q: q_diff.values, w: w_true, j };
    let (q, w) = classes(ctx, mdp.n_pairs(), &truth, Some(&mu))?;
    let loss = ctx.solver("interval", build_average_reward_loss(&mdp, &pi, &mu))?;
    let iv = ctx.solver("interval", unified_interval(&loss, &q, &w, LossMode::Exact))?;
    let result = json!({
        "truth": j,
        "interval": ctx.interval(iv.clone()),
        "point": point_estimate(&iv),
    });
    Ok((result, None))
}

fn run_behavior(ctx: &Ctx) -> Outcome {
    let spec = ctx.cfg.behavior.as_ref().expect("validated");
    let mdp = load_mdp(ctx)?;
    let pi = target_policy(ctx, &mdp)?;
    let behavior = load_policy(ctx, &spec.behavior, &mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let state_mu = spec.state_distribution.clone().unwrap_or_else(|| uniform_distribution(ns));
    if state_mu.len() != ns {
        return Err(validation(ctx, "behavior.state_distribution", format!("expected {ns} entries")));
    }
    let q = ctx.solver("mdp", solve_q_pi(&mdp, &pi))?.values;
    let d = ctx.solver("mdp", solve_d_pi(&mdp, &pi))?.values;
    let v: Vec<f64> = (0..ns).map(|s| pi.state_value(&q, s)).collect();
    let w: Vec<f64> = (0..ns)
        .map(|s| {
            let mass: f64 = (0..na).map(|a| d[s * na + a]).sum();
            if state_mu[s] > 0.0 {
                mass / state_mu[s]
            } else {
                0.0
            }
        })
        .collect();
    let j = ctx.solver("mdp", j_pi(&mdp, &pi))?;
    let truth = Truth { q: v, w, j };
    let (v_class, w_class) = classes(ctx, ns, &truth, None)?;
    let iv = ctx.solver(
        "interval",
        behavior_aware_bounds(&mdp, &pi, &behavior, &state_mu, &v_class, &w_class),
    )?;
    let result = json!({
        "truth": j,
        "interval": ctx.interval(iv.clone()),
        "point": point_estimate(&iv),
    });
    Ok((result, None))
}
