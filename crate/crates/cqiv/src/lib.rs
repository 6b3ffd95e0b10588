//! Censored quantile regression with endogenous regressors.
//!
//! A two-stage estimator for conditional quantiles under fixed censoring:
//! the first stage estimates a control variable (the conditional rank of
//! the endogenous regressor given covariates and instruments), the second
//! stage runs censored quantile regression on a selected quantile-uncensored
//! subsample with the estimated control as an extra regressor. Inference is
//! by weighted (multiplier) bootstrap; a Monte Carlo harness reproduces the
//! standard comparison designs.
//!
//! Independent work units (first-stage grid fits, bootstrap repetitions,
//! Monte Carlo replications) run on rayon when the default `parallel`
//! feature is enabled and sequentially otherwise, with bit-identical
//! results either way.

pub mod control;
pub mod data;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod numkit;
pub(crate) mod par;
pub mod rng;
pub mod sim;

pub use control::{ControlFunction, ControlMethod, ControlTransform, FirstStageSpec};
pub use data::{Dataset, DesignMatrix, WeightVector};
pub use error::{Error, Result};
pub use estimator::{
    fit_cqiv, fit_cqiv_many, powell_objective, quantile_elasticity, CqivConfig, CqivFit,
    StepDiagnostics,
};
pub use inference::{
    bootstrap_cqiv, draw_weights, percentile_ci, percentile_ci_of, BootstrapDraws,
    ConfidenceInterval, RefitSelection, WeightDistribution, WeightScheme,
};
pub use sim::{generate_design, run_monte_carlo, tobit_cmle, McDesign, McResult, SimEstimator};
