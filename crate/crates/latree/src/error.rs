use thiserror::Error;

/// How an error maps onto the CLI exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags or argument combinations (exit 1).
    Usage,
    /// Malformed or inconsistent input data and files (exit 2).
    Data,
    /// Degenerate numerical situations (exit 3).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` is not latent")]
    NotLatent(String),
    #[error("variable `{0}` is not observed")]
    NotObserved(String),
    #[error("state {state} out of range for `{variable}` (cardinality {cardinality})")]
    StateOutOfRange {
        variable: String,
        state: usize,
        cardinality: usize,
    },
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("edge references unknown variable `{0}`")]
    UnknownEdgeEndpoint(String),
    #[error("edge ({0}, {1}) does not exist in the model")]
    UnknownEdge(String, String),
    #[error("variables and edges do not form a tree: {0}")]
    NotATree(String),
    #[error("root `{0}` must be a latent variable of the model")]
    BadRoot(String),
    #[error("table for `{node}` has {got} entries, expected {expected}")]
    CptShape {
        node: String,
        expected: usize,
        got: usize,
    },
    #[error("model is invalid: {}", .0.join("; "))]
    InvalidModel(Vec<String>),
    #[error("marginal over {size} joint states exceeds the 2^20 limit")]
    SubsetTooLarge { size: u128 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has zero total weight")]
    ZeroWeight,
    #[error("dataset is missing model variables: {}", .0.join(", "))]
    VariableMismatch(Vec<String>),
    #[error("evidence has probability zero under the model")]
    ImpossibleEvidence,
    #[error("invalid target states: {0}")]
    InvalidTargetStates(String),
    #[error("merged class prior {0} is degenerate")]
    DegeneratePrior(f64),
    #[error("score for `{0}` is infinite; use smoothing > 0")]
    InfiniteScore(String),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("group spec invalid: {0}")]
    InvalidGroupSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {msg}")]
    DataFormat {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("model file {path}: {msg}")]
    ModelFile { path: String, msg: String },
    #[error("unsupported format_version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidConfig(_) | InvalidScale(_) => ErrorKind::Usage,
            ImpossibleEvidence | DegeneratePrior(_) | InfiniteScore(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
