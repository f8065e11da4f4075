use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parameter layout does not match form: {0}")]
    Layout(String),

    #[error("every term of the prediction is zero, log is undefined")]
    ZeroPrediction,

    #[error("no records to fit")]
    EmptyData,

    #[error("record {run_id}: target value {value} is not positive")]
    NonPositiveTarget { run_id: String, value: f64 },

    #[error("no feasible configuration under budget {budget:e} FLOPs (cheapest costs {min_cost:e} FLOPs)")]
    Infeasible { budget: f64, min_cost: f64 },

    #[error("row {row}: {msg}")]
    Schema { row: usize, msg: String },

    #[error("duplicate entry for run {run_id} metric {metric}")]
    Duplicate { run_id: String, metric: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
