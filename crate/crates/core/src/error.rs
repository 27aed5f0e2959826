use thiserror::Error;

use crate::trainer::MetricsLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible budget: target {target} parameters, closest reachable {best}")]
    InfeasibleBudget { target: u64, best: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at step {step}: {reason}")]
    TrainingDivergence {
        step: usize,
        reason: String,
        /// Rows logged before the failure.
        partial: Box<MetricsLog>,
    },

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by bad configuration or arguments rather than
    /// by something going wrong during a run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidInput(_)
                | Error::InvalidExperiment(_)
                | Error::InsufficientData(_)
                | Error::Json(_)
        )
    }
}
