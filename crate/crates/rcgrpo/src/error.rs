use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed task, config, or input file.
    #[error("validation error: {0}")]
    Validation(String),

    /// A task's golden actions cannot be replayed cleanly.
    #[error("task integrity error for '{task_id}': {msg}")]
    TaskIntegrity { task_id: String, msg: String },

    /// Stored trajectory data is inconsistent (e.g. chosen index out of range).
    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    /// Failure-trajectory synthesis could not reach reward 0.
    #[error("curation error for '{task_id}': {msg}")]
    Curation { task_id: String, msg: String },

    /// Comparing states from different world types.
    #[error("world type mismatch: {0}")]
    WorldMismatch(String),

    /// Non-finite loss, gradient, or statistic.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged or was given unusable data.
    #[error("training error: {0}")]
    Training(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
