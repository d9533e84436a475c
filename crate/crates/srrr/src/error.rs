//! Crate-wide error type.
//!
//! Every variant maps to a stable category string so the CLI can emit
//! single-line, machine-parseable diagnostics of the form
//! `error: <category>: <detail>`.

use thiserror::Error;

/// Errors produced by the library and the CLI front end.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument: dimension mismatches, out-of-range ranks, invalid
    /// penalty weights, malformed configuration keys.
    #[error("argument: {0}")]
    InvalidArgument(String),

    /// Malformed input data file (ragged CSV rows, non-numeric cells).
    #[error("input-format: {0}")]
    InputFormat(String),

    /// The iterative SVD did not converge within its iteration budget.
    #[error("decomposition-failure: SVD did not converge for a {rows}x{cols} matrix")]
    DecompositionFailure { rows: usize, cols: usize },

    /// Singular or near-singular normal equations.
    #[error("ill-conditioned-design: {0}")]
    IllConditionedDesign(String),

    /// A point that violates a feasibility requirement, e.g. a nonzero
    /// coefficient row carrying an infinite penalty weight.
    #[error("infeasible-point: {0}")]
    InfeasiblePoint(String),

    /// A predictor column that is identically zero but carries a finite
    /// penalty weight, making its row update ill-defined.
    #[error("degenerate-column: {0}")]
    DegenerateColumn(String),

    /// The pilot stage selected no predictors at all.
    #[error("empty-model: {0}")]
    EmptyModel(String),

    /// Every tuning-grid point failed or produced an empty model.
    #[error("tuning-failure: {0}")]
    TuningFailure(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("io: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable category slug used in CLI output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "argument",
            Error::InputFormat(_) => "input-format",
            Error::DecompositionFailure { .. } => "decomposition-failure",
            Error::IllConditionedDesign(_) => "ill-conditioned-design",
            Error::InfeasiblePoint(_) => "infeasible-point",
            Error::DegenerateColumn(_) => "degenerate-column",
            Error::EmptyModel(_) => "empty-model",
            Error::TuningFailure(_) => "tuning-failure",
            Error::Io(_) | Error::Json(_) => "io",
        }
    }

    /// Process exit code: 2 for problems with the invocation or its input
    /// files, 1 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::InputFormat(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
