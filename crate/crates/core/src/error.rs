use thiserror::Error;

/// Errors raised by the solvers and model constructors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown control kind `{0}`")]
    UnknownKind(String),

    #[error("invalid control parameters for `{kind}`: {reason}")]
    InvalidControl { kind: &'static str, reason: String },

    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("function is not strictly positive (value {value} at t = {t})")]
    NotPositive { t: f64, value: f64 },

    #[error("no sign change found while bracketing the root (last bracket [{lo}, {hi}])")]
    NoBracket { lo: f64, hi: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("state has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state vector is zero or not nonnegative")]
    ZeroState,

    #[error("power iteration did not converge after {iterations} applications (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("power iteration ratio oscillates without converging (spread {spread:e}); operator looks non-primitive")]
    NonPrimitive { spread: f64 },

    #[error("adjoint spectral radius {adjoint} differs from direct {direct}")]
    AdjointMismatch { direct: f64, adjoint: f64 },

    #[error("gauge shift requires a one-phase model, got {0} phases")]
    NotOnePhase(usize),

    #[error("step {h} is not commensurate with {what} = {value}")]
    NonCommensurate { h: f64, what: &'static str, value: f64 },

    #[error("delay integration produced a non-positive value {value} at t = {t}; reduce the step")]
    NegativeSolution { t: f64, value: f64 },

    #[error("trajectory holds {available} post-burn-in periods, need at least {needed}")]
    InsufficientPeriods { available: usize, needed: usize },

    #[error("phase index {index} out of range for {phases} phases")]
    PhaseOutOfRange { index: usize, phases: usize },

    #[error("epsilon {0} is not part of the sweep")]
    EpsilonNotInSweep(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, value })
    }
}
