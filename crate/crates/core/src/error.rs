use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("tie state S1 cannot serve as the previous non-tie state")]
    TiePrevState,

    #[error("trial {trial} exceeds the configured run length of {n_trials}")]
    RunFinished { trial: usize, n_trials: usize },

    #[error("inconsistent run metadata: {0}")]
    InconsistentRun(String),

    #[error("{0}")]
    Inference(String),

    #[error("posterior is not converged (max R-hat {max_rhat:.3})")]
    NotConverged { max_rhat: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
