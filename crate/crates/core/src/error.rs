use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by state construction, channel application, sampling,
/// reconstruction, and the pipeline runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {got} is too small (need at least {min})")]
    DimensionTooSmall { got: usize, min: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("expected a {expected}-mode state, got {got} modes")]
    ModeMismatch { expected: usize, got: usize },

    #[error("truncated tail weight {weight:.3e} exceeds {limit:.3e}; increase the truncation")]
    TruncationOverflow { weight: f64, limit: f64 },

    #[error("parameter `{name}` out of range: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("matrix is not a valid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("state is not normalized (trace {0})")]
    NotNormalized(f64),

    #[error("herald probability {0:.3e} is numerically zero")]
    NoHerald(f64),

    #[error("qubit state undefined: alpha and r are both zero")]
    UndefinedState,

    #[error("count-rate conversion requires r > 0")]
    ZeroSqueezing,

    #[error("sample {index} has a non-finite value")]
    NonFiniteSample { index: usize },

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },

    #[error("log-likelihood decreased by {drop:.3e} at iteration {iteration}")]
    LikelihoodDecreased { iteration: usize, drop: f64 },

    #[error("state violates qubit positivity: 1 - |rho01|^2/rho11 = {0:.3e}")]
    InvalidQubitState(f64),

    #[error("stage `{stage}` needs `{path}` produced by an earlier stage")]
    MissingStageInput { stage: &'static str, path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("run grids are structurally different: {0}")]
    GridMismatch(String),

    #[error("malformed quadrature record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
