use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// The observation has zero probability under the predicted belief.
    #[error("filter degeneracy: observation {observation} is impossible under the current belief")]
    FilterDegenerate { observation: u32 },

    #[error(
        "dynamic programming over {states} states is impractical (grid too large); pass `force` to override"
    )]
    TooManyStates { states: usize },

    #[error("infeasible policy: {0}")]
    InfeasiblePolicy(String),

    #[error("no rollout placed all {stops} stops within the horizon")]
    NoCompletedRollouts { stops: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
