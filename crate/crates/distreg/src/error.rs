//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants categorize the
//! failure by pipeline stage so the batch driver can report where a run
//! broke down (formula parsing, data handling, model building, estimation,
//! sampling, prediction, or configuration).

/// Errors produced by the distributional-regression pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Formula text could not be parsed or violates the term grammar.
    #[error("formula error: {0}")]
    Formula(String),

    /// Problems reading, writing, or interpreting tabular data.
    #[error("data error: {0}")]
    Data(String),

    /// Model-frame construction failed (design or penalty matrices).
    #[error("design error: {0}")]
    Design(String),

    /// Invalid family usage (bad parameter values, unsupported response).
    #[error("family error: {0}")]
    Family(String),

    /// Optimizer failure (singular systems, degenerate likelihoods).
    #[error("engine error: {0}")]
    Engine(String),

    /// Sampler failure (non-finite targets, invalid chain settings).
    #[error("sampler error: {0}")]
    Sampler(String),

    /// Prediction request invalid or not computable on the new data.
    #[error("prediction error: {0}")]
    Predict(String),

    /// Run configuration invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical routine failed to converge or met invalid input.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
