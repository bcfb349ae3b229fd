use std::path::PathBuf;

use minimax_interval::regularized::Regularizer;
use minimax_interval::FunctionClass;
use serde::{Deserialize, Serialize};

// ── Schema ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Eval,
    Sweep,
    Coverage,
    PolicyOpt,
    RmaxCheck,
    AvgReward,
    BehaviorAware,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Eval => "eval",
            Self::Sweep => "sweep",
            Self::Coverage => "coverage",
            Self::PolicyOpt => "policy-opt",
            Self::RmaxCheck => "rmax-check",
            Self::AvgReward => "avg-reward",
            Self::BehaviorAware => "behavior-aware",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub mdp: MdpSource,
    pub policy: Option<PolicySource>,
    #[serde(default)]
    pub data: DataSpec,
    pub q_class: Option<ClassSpec>,
    pub w_class: Option<ClassSpec>,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default)]
    pub confidence: ConfidenceSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    pub sweep: Option<SweepSpec>,
    pub coverage: Option<CoverageSpec>,
    pub policy_opt: Option<PolicyOptSpec>,
    pub rmax: Option<RmaxSpec>,
    pub behavior: Option<BehaviorSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    File { path: PathBuf },
    Random { n_states: usize, n_actions: usize, gamma: f64, seed: u64 },
    Chain { length: usize, slip: f64, gamma: f64 },
    SingleState { reward: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySource {
    File { path: PathBuf },
    Uniform,
    Random { seed: u64 },
    Deterministic { actions: Vec<usize> },
}

/// Distribution `mu` of the data over state-action pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    #[default]
    Uniform,
    Behavior { policy: PolicySource },
    KnownStates { states: Vec<usize> },
    Explicit { values: Vec<f64> },
}

/// Function class specification. The `truth_*` forms are built around the
/// true value function or weight vector of the evaluated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    File { path: PathBuf },
    Inline { class: FunctionClass },
    UniformBox { lower: f64, upper: f64 },
    TruthBox {
        radius: f64,
        #[serde(default)]
        shift: f64,
    },
    TruthCap { factor: f64 },
    TruthSingleton,
}

impl ClassSpec {
    fn is_truth(&self) -> bool {
        matches!(self, Self::TruthBox { .. } | Self::TruthCap { .. } | Self::TruthSingleton)
    }

    fn is_box_like(&self) -> bool {
        match self {
            Self::Inline { class } => matches!(class, FunctionClass::Box { .. }),
            Self::TruthSingleton => false,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeSpec {
    #[default]
    Exact,
    Empirical {
        n: Option<usize>,
        seed: Option<u64>,
        #[serde(default)]
        noise_width: f64,
        dataset: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfidenceSpec {
    #[default]
    None,
    Bootstrap { b: usize, k: usize },
    Rademacher { delta: f64, n_sigma: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "yes")]
    pub naive: bool,
    #[serde(default)]
    pub regularizers: Vec<Regularizer>,
}

fn yes() -> bool {
    true
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { naive: true, regularizers: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Radius of a `truth_box` value class.
    QRadius,
    /// Factor of a `truth_cap` weight class.
    WFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    pub trials: usize,
    pub n: usize,
    #[serde(default)]
    pub noise_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MlbPo,
    MubPo,
    MlbPoQside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyClassSpec {
    AllDeterministic,
    List { policies: Vec<PolicySource> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOptSpec {
    pub objective: Objective,
    pub policies: PolicyClassSpec,
    /// Run the occupancy-mismatch diagnostic at the chosen policy's weight
    /// certificate.
    #[serde(default)]
    pub ipm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmaxSpec {
    pub known_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSpec {
    pub behavior: PolicySource,
    pub state_distribution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub certificates: bool,
}

// ── Validation ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Parses and validates a TOML config. Never runs a solver.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| vec![Diagnostic::new("<document>", e.message().to_string())])?;
    let mut diags: Vec<Diagnostic> = ["kind", "mdp"]
        .iter()
        .filter(|k| !table.contains_key(**k))
        .map(|k| Diagnostic::new(*k, "missing required field"))
        .collect();
    if !diags.is_empty() {
        return Err(diags);
    }
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let field = e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .map_or_else(|| "<document>".to_string(), |line| format!("line {line}"));
        vec![Diagnostic::new(field, e.message().to_string())]
    })?;
    diags = validate(&config);
    if diags.is_empty() {
        Ok(config)
    } else {
        Err(diags)
    }
}

/// Cross-field checks on a parsed config.
pub fn validate(c: &ExperimentConfig) -> Vec<Diagnostic> {
    use ExperimentKind::*;
    let mut d = Vec::new();
    let mut need = |present: bool, field: &str| {
        if !present {
            d.push(Diagnostic::new(field, format!("required for kind {}", c.kind.name())));
        }
    };
    let uses_classes = c.kind != RmaxCheck;
    need(c.policy.is_some() || matches!(c.kind, PolicyOpt | RmaxCheck), "policy");
    need(c.q_class.is_some() || !uses_classes, "q_class");
    need(c.w_class.is_some() || !uses_classes, "w_class");
    need(c.sweep.is_some() || c.kind != Sweep, "sweep");
    need(c.coverage.is_some() || c.kind != Coverage, "coverage");
    need(c.policy_opt.is_some() || c.kind != PolicyOpt, "policy_opt");
    need(c.rmax.is_some() || c.kind != RmaxCheck, "rmax");
    need(c.behavior.is_some() || c.kind != BehaviorAware, "behavior");

    match &c.mdp {
        MdpSource::Random { n_states, n_actions, gamma, .. } => {
            if *n_states == 0 || *n_actions == 0 {
                d.push(Diagnostic::new("mdp", "n_states and n_actions must be >= 1"));
            }
            check_gamma(&mut d, *gamma, c.kind);
        }
        MdpSource::Chain { length, slip, gamma } => {
            if *length == 0 {
                d.push(Diagnostic::new("mdp.length", "must be >= 1"));
            }
            if !(0.0..=1.0).contains(slip) {
                d.push(Diagnostic::new("mdp.slip", "must lie in [0, 1]"));
            }
            check_gamma(&mut d, *gamma, c.kind);
        }
        MdpSource::SingleState { gamma, .. } => check_gamma(&mut d, *gamma, c.kind),
        MdpSource::File { .. } => {}
    }

    match c.confidence {
        ConfidenceSpec::None => {
            if c.kind == Coverage {
                d.push(Diagnostic::new("confidence", "coverage needs a bootstrap or rademacher method"));
            }
        }
        ConfidenceSpec::Bootstrap { b, k } => {
            if b == 0 {
                d.push(Diagnostic::new("confidence.b", "must be >= 1"));
            }
            if k == 0 {
                d.push(Diagnostic::new("confidence.k", "must be >= 1"));
            }
            if k > b {
                d.push(Diagnostic::new("confidence.k", format!("confidence.k = {k} exceeds confidence.b = {b}")));
            }
        }
        ConfidenceSpec::Rademacher { delta, n_sigma } => {
            if !(delta > 0.0 && delta < 1.0) {
                d.push(Diagnostic::new("confidence.delta", "must lie in (0, 1)"));
            }
            if n_sigma == 0 {
                d.push(Diagnostic::new("confidence.n_sigma", "must be >= 1"));
            }
            for (name, spec) in [("q_class", &c.q_class), ("w_class", &c.w_class)] {
                if spec.as_ref().is_some_and(|s| !s.is_box_like()) {
                    d.push(Diagnostic::new(name, "rademacher needs a box class for its range cap"));
                }
            }
        }
    }
    let confidence_used = !matches!(c.confidence, ConfidenceSpec::None);
    if confidence_used && c.kind == Eval && c.mode == ModeSpec::Exact {
        d.push(Diagnostic::new("confidence", "confidence adjustments need empirical mode"));
    }
    if confidence_used && !matches!(c.kind, Eval | Coverage) {
        d.push(Diagnostic::new("confidence", format!("not used by kind {}", c.kind.name())));
    }

    if let ModeSpec::Empirical { n, dataset, noise_width, .. } = &c.mode {
        if matches!(c.kind, AvgReward | BehaviorAware | RmaxCheck | Coverage) {
            d.push(Diagnostic::new("mode", format!("kind {} runs in exact mode only", c.kind.name())));
        }
        if n.is_none() && dataset.is_none() {
            d.push(Diagnostic::new("mode.n", "empirical mode needs n or a dataset file"));
        }
        if *n == Some(0) {
            d.push(Diagnostic::new("mode.n", "must be >= 1"));
        }
        if *noise_width < 0.0 {
            d.push(Diagnostic::new("mode.noise_width", "must be >= 0"));
        }
    }

    if let Some(s) = &c.sweep {
        if s.values.is_empty() {
            d.push(Diagnostic::new("sweep.values", "must not be empty"));
        }
        if s.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            d.push(Diagnostic::new("sweep.values", "must be finite and >= 0"));
        }
        match s.axis {
            SweepAxis::QRadius if !matches!(c.q_class, Some(ClassSpec::TruthBox { .. })) => {
                d.push(Diagnostic::new("q_class", "a q_radius sweep needs a truth_box value class"));
            }
            SweepAxis::WFactor if !matches!(c.w_class, Some(ClassSpec::TruthCap { .. })) => {
                d.push(Diagnostic::new("w_class", "a w_factor sweep needs a truth_cap weight class"));
            }
            _ => {}
        }
    }
    if let Some(cov) = &c.coverage {
        if cov.trials == 0 {
            d.push(Diagnostic::new("coverage.trials", "must be >= 1"));
        }
        if cov.n == 0 {
            d.push(Diagnostic::new("coverage.n", "must be >= 1"));
        }
        if cov.noise_width < 0.0 {
            d.push(Diagnostic::new("coverage.noise_width", "must be >= 0"));
        }
    }
    if c.kind == PolicyOpt {
        for (name, spec) in [("q_class", &c.q_class), ("w_class", &c.w_class)] {
            if spec.as_ref().is_some_and(ClassSpec::is_truth) {
                d.push(Diagnostic::new(name, "truth-based classes depend on the policy; not allowed for policy-opt"));
            }
        }
    }
    if let Some(r) = &c.rmax {
        if r.known_states.is_empty() {
            d.push(Diagnostic::new("rmax.known_states", "must not be empty"));
        }
    }
    for (name, spec) in [("q_class", &c.q_class), ("w_class", &c.w_class)] {
        match spec {
            Some(ClassSpec::UniformBox { lower, upper }) if !(lower <= upper) => {
                d.push(Diagnostic::new(name, "lower must not exceed upper"));
            }
            Some(ClassSpec::TruthBox { radius, .. }) if !(*radius >= 0.0) => {
                d.push(Diagnostic::new(name, "radius must be >= 0"));
            }
            Some(ClassSpec::TruthCap { factor }) if !(*factor > 0.0) => {
                d.push(Diagnostic::new(name, "factor must be > 0"));
            }
            _ => {}
        }
    }
    for r in &c.eval.regularizers {
        if !(r.lambda() > 0.0) {
            d.push(Diagnostic::new("eval.regularizers", "lambda must be > 0"));
        }
    }
    d
}

fn check_gamma(d: &mut Vec<Diagnostic>, gamma: f64, kind: ExperimentKind) {
    let ok = if kind == ExperimentKind::AvgReward {
        (0.0..=1.0).contains(&gamma)
    } else {
        gamma > 0.0 && gamma < 1.0
    };
    if !ok {
        d.push(Diagnostic::new("mdp.gamma", format!("{gamma} is out of range")));
    }
}
