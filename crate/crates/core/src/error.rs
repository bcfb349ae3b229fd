use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// `mu(s,a) = 0` while the target occupancy puts mass on `(s,a)`; the
    /// marginalized weight does not exist.
    #[error("target occupancy not covered by the data distribution at (s,a) = {pairs:?}")]
    UnsupportedOccupancy { pairs: Vec<(usize, usize)> },

    #[error("behavior policy assigns zero probability to target actions at (s,a) = {pairs:?}")]
    UnsupportedAction { pairs: Vec<(usize, usize)> },

    #[error("induced Markov chain is not ergodic: {0}")]
    NonErgodicChain(String),

    #[error("invalid function class: {0}")]
    InvalidClass(String),

    #[error("function class is empty")]
    InfeasibleClass,

    #[error("objective is unbounded over the given classes")]
    UnboundedObjective,

    #[error("LP solver exceeded the pivot limit ({0})")]
    IterationLimit(usize),

    #[error("singular linear system")]
    SingularSystem,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bootstrap resample {index} failed: {source}")]
    Resample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
