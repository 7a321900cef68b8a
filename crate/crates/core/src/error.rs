use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluator fault: {0}")]
    EvaluatorFault(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    /// One entry per offending field.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
