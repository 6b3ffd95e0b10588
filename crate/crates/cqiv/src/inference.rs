//! Weighted-bootstrap inference for the CQIV estimator.
//!
//! Each repetition draws i.i.d. nonnegative weights with unit mean and unit
//! variance, refits the control variable in the weighted sample, and runs a
//! single weighted quantile regression on a selection derived from the
//! point estimate: the selector model is never refit, and the one-step
//! selection reuses the point-estimate coefficients and slack cutoff.
//! Percentile confidence intervals come from the type-7 sample quantiles of
//! the draws.

use crate::control::fit_control;
use crate::data::{Dataset, WeightVector};
use crate::error::{Error, Result};
use crate::estimator::{CqivConfig, CqivFit};
use crate::numkit::ecdf::quantile_type7;
use crate::numkit::qr::solve_weighted_qr;
use crate::par::map_indexed;
use crate::rng::{child_rng, standard_exponential, uniform_open01, Rng};

/// Distribution of the bootstrap weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDistribution {
    /// Unit mean, unit variance; needs no normalization.
    StandardExponential,
    /// Two-point distribution on {0, 1 + variance} with unit mean; the
    /// degenerate `variance: 0` case yields constant unit weights.
    TwoPoint { variance: f64 },
}

/// How bootstrap weights are generated.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightScheme {
    pub distribution: WeightDistribution,
    /// Rescale draws with variance ≠ 1 as ẽ = 1 + (e − 1)/sd(e).
    pub normalize: bool,
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme { distribution: WeightDistribution::StandardExponential, normalize: true }
    }
}

impl WeightScheme {
    /// Constant unit weights (degenerate bootstrap, reproduces the point
    /// estimate).
    pub fn unit() -> Self {
        WeightScheme { distribution: WeightDistribution::TwoPoint { variance: 0.0 }, normalize: false }
    }
}

/// i.i.d. weight draws under the scheme.
pub fn draw_weights(n: usize, scheme: &WeightScheme, rng: &mut Rng) -> WeightVector {
    let values: Vec<f64> = match scheme.distribution {
        WeightDistribution::StandardExponential => {
            (0..n).map(|_| standard_exponential(rng)).collect()
        }
        WeightDistribution::TwoPoint { variance } => {
            let a = 1.0 + variance;
            let p = 1.0 / a;
            let sd = variance.sqrt();
            (0..n)
                .map(|_| {
                    let e = if uniform_open01(rng) < p { a } else { 0.0 };
                    if scheme.normalize && variance > 0.0 && variance != 1.0 {
                        1.0 + (e - 1.0) / sd
                    } else {
                        e
                    }
                })
                .collect()
        }
    };
    WeightVector::new(values).expect("generated weights are finite and nonnegative")
}

/// Selection rule inside each repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitSelection {
    /// Reselect per draw from the point-estimate coefficients and cutoff:
    /// J₁ᵇ = {i : β̂'x̂ᵢᵇ > cᵢ + ς₁}.
    RefitJ1b,
    /// Reuse the point estimate's selected subsample in every repetition
    /// (the cheap variant; with unit weights it reproduces the point
    /// estimate exactly).
    FixedJ1,
}

/// Resampled coefficient vectors at one quantile.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BootstrapDraws {
    pub u: f64,
    /// Requested number of repetitions.
    pub b_requested: usize,
    /// Coefficient rows of the successful draws, in draw order.
    pub betas: Vec<Vec<f64>>,
    /// Indices of draws that failed (recorded, never imputed).
    pub failed_draws: Vec<usize>,
    pub refit_selection: RefitSelection,
    pub seed: u64,
}

/// Fraction of failed draws past which the bootstrap aborts.
const FAILURE_LIMIT: f64 = 0.10;

/// Weighted bootstrap around completed point estimates.
///
/// `point_fits` holds one completed fit per quantile, all produced from
/// `cfg` (up to the quantile index). Weights and the refit control variable
/// are shared across quantiles within each repetition.
pub fn bootstrap_cqiv(
    data: &Dataset,
    cfg: &CqivConfig,
    point_fits: &[CqivFit],
    b: usize,
    scheme: &WeightScheme,
    refit_selection: RefitSelection,
    seed: u64,
) -> Result<Vec<BootstrapDraws>> {
    if point_fits.is_empty() {
        return Err(Error::invalid("bootstrap requires at least one completed point estimate"));
    }
    for fit in point_fits {
        if cfg.censoring_correction
            && refit_selection == RefitSelection::RefitJ1b
            && fit.varsigma1.is_none()
        {
            return Err(Error::invalid(
                "reselection bootstrap needs the point-estimate slack cutoff",
            ));
        }
    }
    let n = data.n();

    // One repetition: draw weights, refit the control, one weighted QR per
    // quantile. The selector model is not refit.
    let rep = |draw: usize| -> Vec<Option<Vec<f64>>> {
        let mut rng = child_rng(seed, draw as u64);
        let wts = draw_weights(n, scheme, &mut rng);
        let control = match cfg.control_method {
            Some(method) => match fit_control(method, data, &cfg.first_stage, &wts) {
                Ok(cf) => Some(cf),
                Err(_) => return vec![None; point_fits.len()],
            },
            None => None,
        };
        let vhat = control.as_ref().map(|cf| cf.in_sample(data));
        let design = match cfg.build_design(data, vhat.as_deref()) {
            Ok(d) => d,
            Err(_) => return vec![None; point_fits.len()],
        };

        point_fits
            .iter()
            .map(|fit| {
                let rows: Vec<usize> = if !cfg.censoring_correction {
                    (0..n).collect()
                } else {
                    match refit_selection {
                        RefitSelection::FixedJ1 => fit.selected_rows.clone(),
                        RefitSelection::RefitJ1b => {
                            let cutoff = fit.varsigma1.expect("validated above");
                            (0..n)
                                .filter(|&i| {
                                    design.row_dot(i, &fit.beta) > data.c()[i] + cutoff
                                })
                                .collect()
                        }
                    }
                };
                if rows.is_empty() {
                    return None;
                }
                let sub_x = design.select_rows(&rows);
                let sub_y: Vec<f64> = rows.iter().map(|&i| data.y()[i]).collect();
                let sub_w = wts.select(&rows);
                solve_weighted_qr(&sub_x, &sub_y, fit.u, &sub_w).ok().map(|f| f.beta)
            })
            .collect()
    };

    let all: Vec<Vec<Option<Vec<f64>>>> = map_indexed(b, rep);

    let mut out = Vec::with_capacity(point_fits.len());
    for (k, fit) in point_fits.iter().enumerate() {
        let mut betas = Vec::with_capacity(b);
        let mut failed = Vec::new();
        for (draw, rep_result) in all.iter().enumerate() {
            match &rep_result[k] {
                Some(beta) => betas.push(beta.clone()),
                None => failed.push(draw),
            }
        }
        if b > 0 && (failed.len() as f64) > FAILURE_LIMIT * b as f64 {
            return Err(Error::BootstrapFailed {
                failed: failed.len(),
                total: b,
                limit_pct: FAILURE_LIMIT * 100.0,
            });
        }
        out.push(BootstrapDraws {
            u: fit.u,
            b_requested: b,
            betas,
            failed_draws: failed,
            refit_selection,
            seed,
        });
    }
    Ok(out)
}

/// A percentile confidence interval for one functional of the coefficients.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub functional: String,
}

/// Minimum number of successful draws for an interval.
pub const MIN_DRAWS: usize = 20;

/// Percentile interval of g(β̂ᵉ_b): the α/2 and 1−α/2 type-7 sample
/// quantiles of the draws, not recentered.
pub fn percentile_ci_of<F>(
    draws: &BootstrapDraws,
    level: f64,
    functional: &str,
    g: F,
) -> Result<ConfidenceInterval>
where
    F: Fn(&[f64]) -> f64,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("confidence level must lie in (0,1), got {level}")));
    }
    if draws.betas.len() < MIN_DRAWS {
        return Err(Error::TooFewDraws { got: draws.betas.len(), need: MIN_DRAWS });
    }
    let values: Vec<f64> = draws.betas.iter().map(|b| g(b)).collect();
    let alpha = 1.0 - level;
    let lower = quantile_type7(&values, alpha / 2.0);
    let upper = quantile_type7(&values, 1.0 - alpha / 2.0);
    Ok(ConfidenceInterval { level, lower, upper, functional: functional.to_string() })
}

/// Percentile interval for a single coefficient.
pub fn percentile_ci(
    draws: &BootstrapDraws,
    coefficient: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    percentile_ci_of(draws, level, &format!("beta[{coefficient}]"), |b| b[coefficient])
}
