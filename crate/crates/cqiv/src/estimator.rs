//! The CQIV estimator: iterated selection of quantile-uncensored
//! observations around weighted quantile regression fits.
//!
//! The pipeline follows the four-step scheme: fit the control variable
//! (step 0), select an initial quantile-uncensored subsample from a binary
//! censoring-probability model (step 1), run a quantile regression on it
//! (step 2), reselect from the fitted quantile predictions and refit
//! (step 3), then optionally iterate (step 4+), monitoring the censored
//! check-loss objective on the full sample at every step. Degenerate
//! configurations collapse to the comparison estimators: no control and no
//! censoring step is plain quantile regression, a control without the
//! censoring step is the uncensored IV estimator, and a censoring step
//! without a control is censored quantile regression.

use std::sync::Arc;

use crate::control::{fit_control, ControlFunction, ControlMethod, ControlTransform, FirstStageSpec};
use crate::data::{Dataset, DesignMatrix, WeightVector};
use crate::error::{Error, Result};
use crate::numkit::ecdf::quantile_type7;
use crate::numkit::glm::{fit_binary_glm, GlmFit, Link, LINEAR_PREDICTOR_CAP};
use crate::numkit::normal::normal_quantile;
use crate::numkit::qr::{check_loss, solve_weighted_qr};
use crate::par::map_indexed;

/// Shape of the second-stage regressor vector x(D, W, V).
///
/// Columns are laid out as [1, D, D² (optional), W…, T(V̂) (when a control
/// method is configured)].
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct SecondStageSpec {
    /// Include a quadratic term in the endogenous regressor.
    pub d_squared: bool,
}

/// Configuration of one CQIV fit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CqivConfig {
    /// Quantile index in (0,1).
    pub u: f64,
    /// First-stage method; `None` drops the control variable (cqr / qr).
    pub control_method: Option<ControlMethod>,
    /// When off, steps 1–4 are skipped and a single full-sample quantile
    /// regression is run (qiv with a control, qr without).
    pub censoring_correction: bool,
    pub first_stage: FirstStageSpec,
    pub second_stage: SecondStageSpec,
    /// Link of the step-1 censoring-probability model.
    pub selector_link: Link,
    /// Percentage of candidate observations trimmed in step 1 (default 10).
    pub q0: f64,
    /// Percentage trimmed from the predicted-uncensored set in later
    /// selections (default 3).
    pub q1: f64,
    /// Extra step-4 iterations after step 3 (default 5).
    pub max_extra_iterations: usize,
    /// Report the step with the lowest full-sample objective rather than
    /// the last one (default on).
    pub retain_best_by_powell: bool,
}

impl CqivConfig {
    pub fn new(u: f64) -> Self {
        CqivConfig {
            u,
            control_method: Some(ControlMethod::QrGrid),
            censoring_correction: true,
            first_stage: FirstStageSpec::default_for(ControlMethod::QrGrid),
            second_stage: SecondStageSpec::default(),
            selector_link: Link::Probit,
            q0: 10.0,
            q1: 3.0,
            max_extra_iterations: 5,
            retain_best_by_powell: true,
        }
    }

    pub fn with_control(mut self, method: Option<ControlMethod>) -> Self {
        self.control_method = method;
        if let Some(m) = method {
            let transform = self.first_stage.transform;
            self.first_stage = FirstStageSpec { transform, ..FirstStageSpec::default_for(m) };
        }
        self
    }

    pub fn with_transform(mut self, transform: ControlTransform) -> Self {
        self.first_stage.transform = transform;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u < 1.0) {
            return Err(Error::invalid(format!("quantile index must lie in (0,1), got {}", self.u)));
        }
        if !(0.0 < self.q1 && self.q1 < self.q0 && self.q0 < 100.0) {
            return Err(Error::invalid(format!(
                "selection percentages must satisfy 0 < q1 < q0 < 100, got q0={}, q1={}",
                self.q0, self.q1
            )));
        }
        Ok(())
    }

    /// Second-stage design [1, D, D²?, W…, T(V̂)?].
    pub fn build_design(&self, data: &Dataset, vhat: Option<&[f64]>) -> Result<DesignMatrix> {
        let n = data.n();
        let mut columns = Vec::new();
        columns.push(("const".to_string(), vec![1.0; n]));
        columns.push(("d".to_string(), data.d().to_vec()));
        if self.second_stage.d_squared {
            columns.push(("d_sq".to_string(), data.d().iter().map(|v| v * v).collect()));
        }
        for (name, col) in data.w_names().iter().zip(data.w_cols()) {
            columns.push((name.clone(), col.clone()));
        }
        if self.control_method.is_some() {
            let vhat = vhat.ok_or(Error::NotFitted)?;
            columns.push(("control".to_string(), vhat.to_vec()));
        }
        DesignMatrix::from_columns(columns)
    }

    /// Index of the D column in the design.
    pub fn d_index(&self) -> usize {
        1
    }

    /// Index of the D² column, when declared.
    pub fn d_squared_index(&self) -> Option<usize> {
        self.second_stage.d_squared.then_some(2)
    }

    /// Index of the control column, when a control method is configured.
    pub fn control_index(&self, data: &Dataset) -> Option<usize> {
        self.control_method.map(|_| {
            2 + usize::from(self.second_stage.d_squared) + data.w_cols().len()
        })
    }
}

/// Per-step selection and objective diagnostics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StepDiagnostics {
    /// Step label: 2 for the initial subsample regression, 3 for the first
    /// reselection, 4+ for the optional iterations.
    pub step: usize,
    /// Rows in the subsample the coefficients were fit on.
    pub subset_size: usize,
    /// Full-sample censored check loss of this step's coefficients.
    pub powell_objective: f64,
    /// Excess of the selection threshold over 1−u (step 2 only).
    pub k0: Option<f64>,
    /// Slack cutoff ς of this step's reselection (steps ≥ 3).
    pub varsigma1: Option<f64>,
    /// Percent of the full sample retained in the initial selection.
    pub pct_j0: Option<f64>,
    /// Percent of the full sample retained in this step's selection.
    pub pct_j1: Option<f64>,
    /// Percent of the full sample with predicted quantile above its
    /// censoring point.
    pub pct_pred_above_c: Option<f64>,
    /// Percent of the initial selection retained here.
    pub pct_j0_in_j1: Option<f64>,
    /// Rows selected here that the initial selection missed.
    pub count_j1_not_in_j0: Option<usize>,
}

/// A fitted CQIV model at one quantile.
#[derive(Debug, Clone)]
pub struct CqivFit {
    pub u: f64,
    /// Coefficients of the retained step.
    pub beta: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    /// Index into `steps` of the retained step.
    pub selected_step: usize,
    /// Coefficients of every recorded step, parallel to `steps`.
    pub step_betas: Vec<Vec<f64>>,
    pub control: Option<Arc<ControlFunction>>,
    /// Design column names.
    pub column_names: Vec<String>,
    /// Step-3 slack cutoff, reused by the weighted bootstrap.
    pub varsigma1: Option<f64>,
    /// Rows behind the retained coefficients.
    pub selected_rows: Vec<usize>,
    config: CqivConfig,
    design: DesignMatrix,
}

impl CqivFit {
    pub fn config(&self) -> &CqivConfig {
        &self.config
    }

    /// The second-stage design the fit was computed on.
    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    /// Predicted conditional quantile max(x(d, w, V̂(d, wz))'β, c).
    ///
    /// `wz_row` concatenates the W columns and Z columns in dataset order;
    /// the W part enters the regression function while the full row feeds
    /// the control function.
    pub fn predict_quantile(&self, d: f64, wz_row: &[f64], c: f64) -> Result<f64> {
        let v = self.control.as_ref().map(|cf| cf.evaluate(d, wz_row));
        let w_len = self.n_w_columns();
        self.predict_with_transformed_control(d, &wz_row[..w_len], v, c)
    }

    /// Predicted conditional quantile at an explicit raw control value
    /// v ∈ (0,1) (the fit's transform is applied).
    pub fn predict_quantile_at_v(&self, d: f64, w_row: &[f64], v: f64, c: f64) -> Result<f64> {
        let transform = self
            .control
            .as_ref()
            .map(|cf| cf.transform())
            .unwrap_or(ControlTransform::Identity);
        let v = if self.control.is_some() { Some(transform.apply(v)) } else { None };
        self.predict_with_transformed_control(d, w_row, v, c)
    }

    fn n_w_columns(&self) -> usize {
        self.column_names.len()
            - 2
            - usize::from(self.config.second_stage.d_squared)
            - usize::from(self.control.is_some())
    }

    fn predict_with_transformed_control(
        &self,
        d: f64,
        w_row: &[f64],
        v: Option<f64>,
        c: f64,
    ) -> Result<f64> {
        if w_row.len() < self.n_w_columns() {
            return Err(Error::SpecMismatch {
                what: format!(
                    "prediction row has {} covariates, the fit uses {}",
                    w_row.len(),
                    self.n_w_columns()
                ),
            });
        }
        let mut x = Vec::with_capacity(self.beta.len());
        x.push(1.0);
        x.push(d);
        if self.config.second_stage.d_squared {
            x.push(d * d);
        }
        x.extend_from_slice(&w_row[..self.n_w_columns()]);
        if let Some(v) = v {
            x.push(v);
        }
        if x.len() != self.beta.len() {
            return Err(Error::SpecMismatch {
                what: "prediction row does not match the fitted design".into(),
            });
        }
        let lin: f64 = x.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        Ok(lin.max(c))
    }
}

/// Full-sample censored check loss
/// Σᵢ wᵢ ρ_u(yᵢ − max(x̂ᵢ'β, cᵢ)) / Σᵢ wᵢ.
pub fn powell_objective(
    beta: &[f64],
    data: &Dataset,
    design: &DesignMatrix,
    u: f64,
    w: &WeightVector,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..data.n() {
        let pred = design.row_dot(i, beta).max(data.c()[i]);
        acc += w.values()[i] * check_loss(data.y()[i] - pred, u);
    }
    acc / w.sum()
}

/// Outcome of the initial (step 1) selection.
pub struct InitialSelection {
    pub rows: Vec<usize>,
    pub k0: f64,
    pub glm: Option<GlmFit>,
}

/// Step 1: fit a binary model for P(Y > C | X, C) and keep observations
/// whose fitted probability clears the trimmed threshold.
///
/// The threshold is the q0-th percentile of fitted probabilities among
/// observations with fitted probability above 1−u; selection compares
/// linear predictors, which is equivalent under a monotone link but immune
/// to fitted probabilities rounding to 1. The reported k0 is the threshold
/// probability minus (1−u).
pub fn select_j0(
    data: &Dataset,
    design: &DesignMatrix,
    cfg: &CqivConfig,
    w: &WeightVector,
) -> Result<InitialSelection> {
    let n = data.n();
    let uncensored: Vec<bool> =
        (0..n).map(|i| data.y()[i] > data.c()[i]).collect();
    let any_censored = uncensored.iter().any(|t| !t);
    let all_censored = uncensored.iter().all(|t| !t);

    if all_censored {
        return Err(Error::EmptySelection { u: cfg.u, censored_fraction: 1.0 });
    }
    if !any_censored {
        // Degenerate zero-censoring sample: every observation is
        // quantile-uncensored, and the capped selector model would fit
        // probability one everywhere. Keep the full sample.
        let mut delta = vec![0.0; design.cols() + 1];
        delta[0] = LINEAR_PREDICTOR_CAP;
        return Ok(InitialSelection {
            rows: (0..n).collect(),
            k0: cfg.u,
            glm: Some(GlmFit {
                delta,
                link: cfg.selector_link,
                loglik: 0.0,
                converged: false,
                quasi_separated: true,
            }),
        });
    }

    // Ŝ = (X̂', C)', dropping the censoring column when it is constant.
    let c0 = data.c()[0];
    let c_constant = data.c().iter().all(|&c| c == c0);
    let mut columns: Vec<(String, Vec<f64>)> = design
        .column_names()
        .iter()
        .cloned()
        .zip((0..design.cols()).map(|j| (0..n).map(|i| design.values()[(i, j)]).collect()))
        .collect();
    if !c_constant {
        columns.push(("censor_point".to_string(), data.c().to_vec()));
    }
    let s_design = DesignMatrix::from_columns(columns)?;
    let glm = fit_binary_glm(&s_design, &uncensored, cfg.selector_link, w)?;

    let eta: Vec<f64> = (0..n).map(|i| glm.linear_predictor(&s_design.row(i))).collect();
    let eta_floor = match cfg.selector_link {
        Link::Probit => normal_quantile(1.0 - cfg.u)?,
        Link::Logit => ((1.0 - cfg.u) / cfg.u).ln(),
    };
    let candidates: Vec<f64> = eta.iter().copied().filter(|&e| e > eta_floor).collect();
    if candidates.is_empty() {
        return Err(Error::EmptySelection {
            u: cfg.u,
            censored_fraction: data.censored_fraction(),
        });
    }
    let eta_cut = quantile_type7(&candidates, cfg.q0 / 100.0);
    let rows: Vec<usize> = (0..n).filter(|&i| eta[i] > eta_cut).collect();
    if rows.is_empty() {
        return Err(Error::EmptySelection {
            u: cfg.u,
            censored_fraction: data.censored_fraction(),
        });
    }
    let k0 = cfg.selector_link.prob(eta_cut) - (1.0 - cfg.u);
    Ok(InitialSelection { rows, k0, glm: Some(glm) })
}

/// Outcome of a predicted-quantile reselection (steps 2 onward).
pub struct Reselection {
    pub rows: Vec<usize>,
    pub varsigma: f64,
    pub pct_pred_above_c: f64,
}

/// Keep observations whose predicted quantile exceeds the censoring point
/// by more than ς, the q1-th percentile of the positive slacks.
pub fn select_j_next(
    beta_prev: &[f64],
    data: &Dataset,
    design: &DesignMatrix,
    u: f64,
    q1: f64,
) -> Result<Reselection> {
    let n = data.n();
    if beta_prev.iter().any(|b| !b.is_finite()) {
        return Err(Error::non_finite("previous-step coefficients"));
    }
    let slack: Vec<f64> =
        (0..n).map(|i| design.row_dot(i, beta_prev) - data.c()[i]).collect();
    let positive: Vec<f64> = slack.iter().copied().filter(|&s| s > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::EmptySelection { u, censored_fraction: data.censored_fraction() });
    }
    let varsigma = quantile_type7(&positive, q1 / 100.0);
    let rows: Vec<usize> = (0..n).filter(|&i| slack[i] > varsigma).collect();
    if rows.is_empty() {
        return Err(Error::EmptySelection { u, censored_fraction: data.censored_fraction() });
    }
    Ok(Reselection {
        rows,
        varsigma,
        pct_pred_above_c: 100.0 * positive.len() as f64 / n as f64,
    })
}

fn qr_on_subset(
    design: &DesignMatrix,
    y: &[f64],
    rows: &[usize],
    u: f64,
    w: &WeightVector,
) -> Result<Vec<f64>> {
    let sub_x = design.select_rows(rows);
    let sub_y: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let sub_w = w.select(rows);
    Ok(solve_weighted_qr(&sub_x, &sub_y, u, &sub_w)?.beta)
}

/// Fit the CQIV estimator at `cfg.u`.
pub fn fit_cqiv(data: &Dataset, cfg: &CqivConfig, w: &WeightVector) -> Result<CqivFit> {
    cfg.validate()?;
    if w.len() != data.n() {
        return Err(Error::invalid("weight vector length does not match the dataset"));
    }
    let control = match cfg.control_method {
        Some(method) => Some(Arc::new(fit_control(method, data, &cfg.first_stage, w)?)),
        None => None,
    };
    fit_cqiv_with_control(data, cfg, w, control)
}

/// Fit several quantiles sharing one first-stage (step 0) control fit and
/// one censoring-probability model.
pub fn fit_cqiv_many(
    data: &Dataset,
    cfg: &CqivConfig,
    quantiles: &[f64],
    w: &WeightVector,
) -> Result<Vec<Result<CqivFit>>> {
    cfg.validate()?;
    let control = match cfg.control_method {
        Some(method) => Some(Arc::new(fit_control(method, data, &cfg.first_stage, w)?)),
        None => None,
    };
    Ok(map_indexed(quantiles.len(), |k| {
        let mut cfg_u = cfg.clone();
        cfg_u.u = quantiles[k];
        cfg_u.validate()?;
        fit_cqiv_with_control(data, &cfg_u, w, control.clone())
    }))
}

fn fit_cqiv_with_control(
    data: &Dataset,
    cfg: &CqivConfig,
    w: &WeightVector,
    control: Option<Arc<ControlFunction>>,
) -> Result<CqivFit> {
    let vhat = control.as_ref().map(|cf| cf.in_sample(data));
    let design = cfg.build_design(data, vhat.as_deref())?;
    let n = data.n();
    let u = cfg.u;

    if !cfg.censoring_correction {
        // qiv (with control) or plain qr (without): one full-sample fit.
        let all: Vec<usize> = (0..n).collect();
        let beta = qr_on_subset(&design, data.y(), &all, u, w)?;
        let objective = powell_objective(&beta, data, &design, u, w);
        let steps = vec![StepDiagnostics {
            step: 2,
            subset_size: n,
            powell_objective: objective,
            k0: None,
            varsigma1: None,
            pct_j0: None,
            pct_j1: None,
            pct_pred_above_c: None,
            pct_j0_in_j1: None,
            count_j1_not_in_j0: None,
        }];
        return Ok(CqivFit {
            u,
            beta: beta.clone(),
            steps,
            selected_step: 0,
            step_betas: vec![beta],
            control,
            column_names: design.column_names().to_vec(),
            varsigma1: None,
            selected_rows: all,
            config: cfg.clone(),
            design,
        });
    }

    // Step 1: initial quantile-uncensored selection.
    let initial = select_j0(data, &design, cfg, w)?;
    let j0 = initial.rows.clone();
    let pct_j0 = 100.0 * j0.len() as f64 / n as f64;

    // Step 2: quantile regression on J0.
    let beta0 = qr_on_subset(&design, data.y(), &j0, u, w)?;
    let mut steps = vec![StepDiagnostics {
        step: 2,
        subset_size: j0.len(),
        powell_objective: powell_objective(&beta0, data, &design, u, w),
        k0: Some(initial.k0),
        varsigma1: None,
        pct_j0: Some(pct_j0),
        pct_j1: None,
        pct_pred_above_c: None,
        pct_j0_in_j1: None,
        count_j1_not_in_j0: None,
    }];
    let mut step_betas = vec![beta0.clone()];
    let mut step_rows = vec![j0.clone()];

    // Step 3: reselect from the step-2 predictions and refit.
    let resel = select_j_next(&beta0, data, &design, u, cfg.q1)?;
    let varsigma1 = resel.varsigma;
    let beta1 = qr_on_subset(&design, data.y(), &resel.rows, u, w)?;
    steps.push(reselection_diagnostics(
        3,
        &resel,
        &j0,
        n,
        powell_objective(&beta1, data, &design, u, w),
    ));
    step_betas.push(beta1.clone());
    step_rows.push(resel.rows.clone());

    // Step 4 (optional): iterate reselection while the objective improves.
    let mut prev_rows = resel.rows;
    let mut prev_beta = beta1;
    for extra in 0..cfg.max_extra_iterations {
        let resel = match select_j_next(&prev_beta, data, &design, u, cfg.q1) {
            Ok(r) => r,
            // A later iteration losing every observation is a stopping
            // condition, not a failure: earlier steps hold a valid fit.
            Err(Error::EmptySelection { .. }) => break,
            Err(e) => return Err(e),
        };
        let same_rows = resel.rows == prev_rows;
        let beta_next = if same_rows {
            prev_beta.clone()
        } else {
            qr_on_subset(&design, data.y(), &resel.rows, u, w)?
        };
        let objective = powell_objective(&beta_next, data, &design, u, w);
        steps.push(reselection_diagnostics(4 + extra, &resel, &j0, n, objective));
        step_betas.push(beta_next.clone());
        step_rows.push(resel.rows.clone());
        let increased = objective > steps[steps.len() - 2].powell_objective;
        prev_rows = resel.rows;
        prev_beta = beta_next;
        if same_rows || increased {
            break;
        }
    }

    let selected_step = if cfg.retain_best_by_powell {
        let mut best = 0;
        for (idx, s) in steps.iter().enumerate() {
            if s.powell_objective < steps[best].powell_objective {
                best = idx;
            }
        }
        best
    } else {
        steps.len() - 1
    };

    Ok(CqivFit {
        u,
        beta: step_betas[selected_step].clone(),
        steps,
        selected_step,
        step_betas,
        control,
        column_names: design.column_names().to_vec(),
        varsigma1: Some(varsigma1),
        selected_rows: step_rows[selected_step].clone(),
        config: cfg.clone(),
        design,
    })
}

fn reselection_diagnostics(
    step: usize,
    resel: &Reselection,
    j0: &[usize],
    n: usize,
    powell_objective: f64,
) -> StepDiagnostics {
    let in_j0 = |i: &usize| j0.binary_search(i).is_ok();
    let overlap = resel.rows.iter().filter(|i| in_j0(i)).count();
    StepDiagnostics {
        step,
        subset_size: resel.rows.len(),
        powell_objective,
        k0: None,
        varsigma1: Some(resel.varsigma),
        pct_j0: None,
        pct_j1: Some(100.0 * resel.rows.len() as f64 / n as f64),
        pct_pred_above_c: Some(resel.pct_pred_above_c),
        pct_j0_in_j1: Some(if j0.is_empty() {
            0.0
        } else {
            100.0 * overlap as f64 / j0.len() as f64
        }),
        count_j1_not_in_j0: Some(resel.rows.len() - overlap),
    }
}

/// Per-row quantile elasticity 1{x̂'β > c}·(β_d + 2 β_d² d) and its average.
pub fn quantile_elasticity(fit: &CqivFit, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let d_idx = fit.config.d_index();
    let dsq_idx = fit.config.d_squared_index().ok_or(Error::SpecMismatch {
        what: "quantile elasticity requires a D² column in the second stage".into(),
    })?;
    elasticity_of_beta(&fit.beta, fit.design(), data, d_idx, dsq_idx)
}

/// Elasticity of an arbitrary coefficient vector on a given design (used
/// for bootstrap draws evaluated on the point-estimate design).
pub fn elasticity_of_beta(
    beta: &[f64],
    design: &DesignMatrix,
    data: &Dataset,
    d_idx: usize,
    dsq_idx: usize,
) -> Result<(f64, Vec<f64>)> {
    if beta.len() != design.cols() || dsq_idx >= beta.len() {
        return Err(Error::SpecMismatch {
            what: "coefficient vector does not match the design layout".into(),
        });
    }
    let n = data.n();
    let per_row: Vec<f64> = (0..n)
        .map(|i| {
            let pred = design.row_dot(i, beta);
            if pred > data.c()[i] {
                beta[d_idx] + 2.0 * beta[dsq_idx] * data.d()[i]
            } else {
                0.0
            }
        })
        .collect();
    let avg = per_row.iter().sum::<f64>() / n as f64;
    Ok((avg, per_row))
}
