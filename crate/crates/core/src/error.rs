use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {0} is terminal and has no children")]
    TerminalState(String),
    #[error("the initial state has no parents")]
    InitialState,
    #[error("state {0} is not terminal")]
    NotTerminal(String),
    #[error("action {action} is not legal at state {state}")]
    IllegalAction { state: String, action: usize },
    #[error("no reward table entry for {0}")]
    MissingTableEntry(String),
    #[error("malformed reward table line {line}: {reason}")]
    TableFormat { line: usize, reason: String },
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("zero probability: {0}")]
    ZeroProbability(String),
    #[error("reward must be positive, got {0}")]
    NonPositiveReward(f64),
    #[error("degenerate support: {0}")]
    DegenerateSupport(String),
    #[error("DAG enumeration exceeds the cap of {cap} edges")]
    CapExceeded { cap: usize },
    #[error("support mismatch: {left} vs {right} entries")]
    SupportMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss during {0}")]
    NonFiniteLoss(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
