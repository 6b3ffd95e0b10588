//! Crate-wide error type.

/// Alias for results produced by this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by estimation, inference, and simulation routines.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Design matrix is rank deficient on the (positively weighted) sample.
    #[error("rank-deficient design: {context}")]
    RankDeficient { context: String },

    /// An input contains NaN or infinity.
    #[error("non-finite input: {what}")]
    NonFinite { what: String },

    /// Perfect separation detected while fitting a binary-response model.
    #[error("perfect separation in binary response model: the selector is degenerate")]
    Separation,

    /// No quantile-uncensored observations can be selected at this quantile.
    #[error(
        "empty selection at quantile {u}: no observation is predicted quantile-uncensored \
         (censored fraction {censored_fraction:.3}); the requested quantile likely lies below \
         the censoring quantile"
    )]
    EmptySelection { u: f64, censored_fraction: f64 },

    /// An operation that requires a fitted object received an unfitted one.
    #[error("control function has not been fitted")]
    NotFitted,

    /// Argument outside its mathematical domain.
    #[error("domain error: {what}")]
    Domain { what: String },

    /// Too few successful bootstrap draws to form an interval.
    #[error("too few bootstrap draws: {got} successful, at least {need} required")]
    TooFewDraws { got: usize, need: usize },

    /// Too many bootstrap draws failed.
    #[error("bootstrap aborted: {failed} of {total} draws failed (more than {limit_pct}%)")]
    BootstrapFailed { failed: usize, total: usize, limit_pct: f64 },

    /// An iterative optimizer did not converge.
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    /// The second-stage specification does not declare a required column.
    #[error("specification mismatch: {what}")]
    SpecMismatch { what: String },

    /// Invalid argument or configuration.
    #[error("invalid input: {what}")]
    InvalidInput { what: String },

    /// Too many first-stage grid points failed to fit.
    #[error("first stage aborted: {failed} of {total} grid points failed to fit")]
    FirstStageGridFailure { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>) -> Self {
        Error::InvalidInput { what: what.into() }
    }

    pub(crate) fn domain(what: impl Into<String>) -> Self {
        Error::Domain { what: what.into() }
    }

    pub(crate) fn rank_deficient(context: impl Into<String>) -> Self {
        Error::RankDeficient { context: context.into() }
    }

    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite { what: what.into() }
    }
}
