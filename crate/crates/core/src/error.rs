use thiserror::Error;

/// Errors produced by the dose-finding engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("cholesky factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("posterior mode search did not converge after {0} Newton iterations")]
    NoConvergence(usize),

    #[error("data do not align with the dose grid: {0}")]
    Misaligned(String),

    #[error("quadrature produced a non-finite value")]
    NonFiniteQuadrature,

    #[error("invalid trial state: {0}")]
    State(String),

    #[error("replication failed (scenario {scenario}, design {design}, rep {rep}, seed {seed}): {message}")]
    Replication {
        scenario: u32,
        design: String,
        rep: usize,
        seed: u64,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
