//! Self-contained numerical kernels: weighted quantile regression, weighted
//! least squares, binary-response maximum likelihood, empirical CDFs, and
//! standard-normal distribution functions.

pub mod ecdf;
pub mod glm;
pub mod normal;
pub mod ols;
pub mod qr;

pub use ecdf::{empirical_cdf_rank, quantile_type7, quantile_type7_sorted, Ecdf, EcdfMode};
pub use glm::{fit_binary_glm, GlmFit, Link, LINEAR_PREDICTOR_CAP};
pub use normal::{erf, erfc, normal_cdf, normal_pdf, normal_quantile};
pub use ols::{residuals, solve_ols};
pub use qr::{check_loss, solve_weighted_qr, QuantileFit};
