use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {len} options")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sampled arm {0} has zero probability")]
    ZeroProbability(usize),

    #[error("trajectory carries no per-step reward")]
    MissingReward,

    #[error("enumeration needs {needed} trajectories, limit is {limit}")]
    EnumerationTooLarge { needed: u128, limit: u128 },

    #[error("policy undefined at step {step}")]
    PolicyUndefined { step: usize },

    #[error("self-play and dueling iterates diverged at round {0}")]
    Diverged(usize),

    #[error("reward fit diverged: {0}")]
    FitDiverged(String),

    #[error("config: {0}")]
    Config(String),

    #[error("run {run_id}: {source}")]
    Run { run_id: String, source: Box<SpoError> },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpoError>;
