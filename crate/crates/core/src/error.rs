use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Raised for single-feature instances where no informative perturbation exists.
    #[error("degenerate instance: d' = {d_prime} admits no informative perturbation")]
    DegenerateInstance { d_prime: usize },

    /// The Shapley kernel is infinite for the empty and the full coalition.
    #[error("infinite kernel weight for subset size {size} of {d_prime}; route through the constraint")]
    InfiniteWeight { d_prime: usize, size: usize },

    #[error("numerical failure: {message} (max diagonal {max_diag:.3e}, min pivot {min_pivot:.3e})")]
    Numerical { message: String, max_diag: f64, min_pivot: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Ingest { path: PathBuf, line: u64, message: String },

    /// The user cannot take part in a particular metric (too few features).
    #[error("user skipped: {0}")]
    Skip(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
