use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("Lévy measure is not integrable against 1∧x²: {0}")]
    NonIntegrableLevyMeasure(String),
    #[error("integral test inconclusive: {0}")]
    InconclusiveIntegralTest(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("limit did not converge: {0}")]
    NonConvergent(String),
    #[error("tail mass is infinite at the truncation level {0}")]
    InfiniteMass(f64),
    #[error("jump rate is infinite at cutoff {0}")]
    InfiniteRate(f64),
    #[error("mechanism not supported by {0}")]
    UnsupportedMechanism(&'static str),
    #[error("step size too large: a step moved more than half the mass at t={time}")]
    StepSizeTooLarge { time: f64 },
    #[error("length mismatch: {left} positions vs {right} levels")]
    LengthMismatch { left: usize, right: usize },
    #[error("cannot start an extremal process at the instantaneous state {0}")]
    InstantaneousState(f64),
    #[error("record processes live on different domains ({0} vs {1})")]
    DomainMismatch(f64, f64),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Validation { field: field.to_string(), reason: reason.into() }
}
