//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced NaN/Inf or exceeded a hard numeric limit.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// The adaptive Krylov evaluation ran out of its matvec budget before
    /// reaching the requested tolerance. Carries the best result obtained so
    /// far together with its error estimate.
    #[error("krylov matvec budget exceeded (est_error {est_error:.3e} > tolerance)")]
    BudgetExceeded {
        est_error: f64,
        report: Box<crate::krylov::KrylovReport>,
    },

    /// The requested execution strategy cannot be realized for this method.
    #[error("plan infeasible: {0}")]
    PlanInfeasible(String),

    #[error("not available: {0}")]
    NotAvailable(String),

    /// Adaptive step size fell below the smallest representable fraction of
    /// the integration span.
    #[error("step size underflow at t = {t:.6e} (h = {h:.6e})")]
    StiffnessFailure { t: f64, h: f64 },

    #[error("tableau parse error at line {line}: {msg}")]
    TableauParse { line: usize, msg: String },

    /// A time step failed mid-integration; carries the partial run report.
    #[error("integration aborted at t = {t:.6e}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<Error>,
        report: Box<crate::report::RunReport>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFailure(msg.into())
    }
}
