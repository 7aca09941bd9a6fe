use thiserror::Error;

use crate::metric::Point;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("energy evaluation failed at {x:?}: {reason}")]
    Evaluation { x: Vec<f64>, reason: String },

    #[error("capability `{capability}` is not available for energy kind `{kind}`")]
    CapabilityAbsent {
        capability: &'static str,
        kind: &'static str,
    },

    #[error(
        "well-posedness certificate failed at eps={eps}, v={witness:?}: \
         phi_eps(v) + d(v,u*)/(2 tau*) = {value} < C* = {c_star}"
    )]
    CertificateFailure {
        eps: f64,
        witness: Point,
        value: f64,
        c_star: f64,
    },

    #[error(
        "numeric prox search exhausted {max_iters} iterations without reaching tolerance {tol}"
    )]
    BudgetExhausted { max_iters: usize, tol: f64 },

    #[error("invalid prox step delta={delta}: must lie in (0, tau*={tau_star})")]
    InvalidDelta { delta: f64, tau_star: f64 },

    #[error("time step tau={tau} violates tau < tau*/8 = {limit} (tau*={tau_star})", limit = tau_star / 8.0)]
    TimeStep { tau: f64, tau_star: f64 },

    #[error("scheme step {step} failed: {source}")]
    SchemeStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time {t} is outside the trajectory range [0, {max}]")]
    OutOfRange { t: f64, max: f64 },

    #[error("interpolant does not cover step {0}")]
    InterpolantCoverage(usize),

    #[error("sequence does not converge to the limit point: {0}")]
    SequenceNotConvergent(String),

    #[error("duplicate or unsorted sample times near t={0}")]
    DuplicateTimes(f64),

    #[error("expression error: {0}")]
    Expression(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
