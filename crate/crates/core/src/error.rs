use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot realize {kind} on a component of size {size}: {reason}")]
    InvalidComponentSize { kind: String, size: usize, reason: String },

    #[error("invalid sample size K={k} for n={n} devices (need 1 <= K <= n)")]
    InvalidK { n: usize, k: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite model parameters at round {round}")]
    NonFiniteState { round: usize },

    #[error("invalid recursion parameters: {0}")]
    InvalidParams(String),

    #[error("stepsize {eta:e} exceeds the admissible cap p/(8L) = {cap:e}")]
    StepsizeTooLarge { eta: f64, cap: f64 },

    #[error("S2S bounds diverge for K = 1")]
    DivergentAtK1,

    #[error("target accuracy {epsilon:e} unreachable within 2^62 rounds")]
    Unreachable { epsilon: f64 },

    #[error("invalid grid value {value} for axis {axis}")]
    InvalidGrid { axis: String, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
