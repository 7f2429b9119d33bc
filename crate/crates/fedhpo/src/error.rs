use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSearchSpace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("insufficient observations: history is empty")]
    EmptyHistory,

    #[error("query is not a member of the candidate set")]
    UnknownCategory,

    #[error("non-finite activation encountered (max |param| = {magnitude})")]
    NonFiniteActivation { magnitude: f64 },

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid task spec: {0}")]
    InvalidTaskSpec(String),

    #[error("class {class} too small to populate train/val/test splits")]
    SplitTooSmall { class: u8 },

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("invalid experiment config: {0}")]
    InvalidExperimentConfig(String),

    #[error("missing phase-1 optimum for ({task}, {model})")]
    MissingOptimum { task: String, model: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
