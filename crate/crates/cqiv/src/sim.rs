//! Monte Carlo harness: simulation designs, the conditional-ML tobit
//! comparison estimator, and bias/RMSE aggregation over an estimator
//! battery.

use nalgebra::{DMatrix, DVector};

use crate::control::{ControlMethod, ControlTransform};
use crate::data::{Dataset, DesignMatrix, WeightVector};
use crate::error::{Error, Result};
use crate::estimator::{fit_cqiv_many, CqivConfig};
use crate::numkit::ecdf::quantile_type7;
use crate::numkit::normal::{normal_cdf, normal_pdf};
use crate::numkit::ols::solve_ols;
use crate::par::map_indexed;
use crate::rng::{child_rng, standard_normal, Rng};

/// First-stage shape of the simulated design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McVariant {
    /// D = π00 + π01·Z + π02·W + Φ⁻¹(V).
    Homoskedastic,
    /// D = π00 + π01·Z + π02·W + (π03 + π04·W)·Φ⁻¹(V).
    Heteroskedastic,
}

/// Simulation design parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct McDesign {
    pub variant: McVariant,
    pub n: usize,
    /// Correlation between Φ⁻¹(V) and Φ⁻¹(ε); also the true control
    /// coefficient when the control term enters the quantile function.
    pub rho0: f64,
    /// (π00, π01, π02, π03, π04); the last two matter only in the
    /// heteroskedastic variant.
    pub pi: [f64; 5],
    /// (β00, β01, β02).
    pub beta: [f64; 3],
    /// In-sample quantile of Y* at which the response is censored.
    pub censor_quantile: f64,
    /// In-sample quantile at which the lognormal covariate is capped.
    pub w_cap_quantile: f64,
    pub seed: u64,
}

impl McDesign {
    pub fn homoskedastic(n: usize, seed: u64) -> Self {
        McDesign {
            variant: McVariant::Homoskedastic,
            n,
            rho0: 0.9,
            pi: [0.0, 1.0, 1.0, 1.0, 1.0],
            beta: [0.0, 1.0, 1.0],
            censor_quantile: 0.38,
            w_cap_quantile: 0.95,
            seed,
        }
    }

    pub fn heteroskedastic(n: usize, seed: u64) -> Self {
        McDesign { variant: McVariant::Heteroskedastic, ..Self::homoskedastic(n, seed) }
    }

    /// True coefficient on D (identical at every quantile in this location
    /// model).
    pub fn true_d_coef(&self) -> f64 {
        self.beta[1]
    }
}

/// Latent quantities behind one generated sample.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    /// Uniform first-stage rank V.
    pub v: Vec<f64>,
    /// Uniform structural disturbance ε.
    pub eps: Vec<f64>,
    /// Φ⁻¹(V).
    pub normal_v: Vec<f64>,
    /// Φ⁻¹(ε).
    pub normal_eps: Vec<f64>,
    pub y_star: Vec<f64>,
    pub censor_point: f64,
    pub true_beta: [f64; 3],
    /// True coefficient of the Φ⁻¹(V) control term.
    pub control_coef: f64,
}

/// Draw one sample from the design.
pub fn generate_design(design: &McDesign, rng: &mut Rng) -> (Dataset, TruthRecord) {
    let n = design.n;
    let [pi00, pi01, pi02, pi03, pi04] = design.pi;
    let [b00, b01, b02] = design.beta;
    let rho = design.rho0;
    let rho_c = (1.0 - rho * rho).sqrt();

    let mut z = Vec::with_capacity(n);
    let mut w_raw = Vec::with_capacity(n);
    let mut nv = Vec::with_capacity(n);
    let mut ne = Vec::with_capacity(n);
    for _ in 0..n {
        z.push(standard_normal(rng));
        w_raw.push(standard_normal(rng).exp());
        let v = standard_normal(rng);
        let un = standard_normal(rng);
        nv.push(v);
        ne.push(rho * v + rho_c * un);
    }

    let q_w = quantile_type7(&w_raw, design.w_cap_quantile);
    let w_col: Vec<f64> = w_raw.iter().map(|&w| w.min(q_w)).collect();

    let d: Vec<f64> = (0..n)
        .map(|i| {
            let scale = match design.variant {
                McVariant::Homoskedastic => 1.0,
                McVariant::Heteroskedastic => pi03 + pi04 * w_col[i],
            };
            pi00 + pi01 * z[i] + pi02 * w_col[i] + scale * nv[i]
        })
        .collect();
    let y_star: Vec<f64> = (0..n).map(|i| b00 + b01 * d[i] + b02 * w_col[i] + ne[i]).collect();
    let c = quantile_type7(&y_star, design.censor_quantile);
    let y: Vec<f64> = y_star.iter().map(|&v| v.max(c)).collect();

    let truth = TruthRecord {
        v: nv.iter().map(|&x| normal_cdf(x)).collect(),
        eps: ne.iter().map(|&x| normal_cdf(x)).collect(),
        normal_v: nv,
        normal_eps: ne,
        y_star,
        censor_point: c,
        true_beta: design.beta,
        control_coef: rho,
    };
    let data = Dataset::with_constant_censoring(y, d, vec![w_col], vec![z], c)
        .expect("generated columns are finite and equal length");
    (data, truth)
}

/// A fitted censored-normal regression.
#[derive(Debug, Clone)]
pub struct TobitFit {
    /// Coefficients of (1, D, W…, v̂) in design order.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub loglik: f64,
    pub iterations: usize,
}

const TOBIT_MAX_ITER: usize = 200;
const TOBIT_CAP: f64 = 30.0;

/// Conditional maximum-likelihood tobit: censored-normal regression of Y on
/// (1, D, W, v̂) with the raw first-stage OLS residuals v̂ as the control
/// regressor and left censoring at the per-row censoring point.
///
/// Parameterized as (γ, h) = (β/σ, 1/σ), under which the likelihood is
/// globally concave.
#[allow(clippy::needless_range_loop)]
pub fn tobit_cmle(data: &Dataset) -> Result<TobitFit> {
    let n = data.n();
    // First stage: OLS of D on (1, W, Z); keep raw residuals.
    let mut fs_cols = vec![("const".to_string(), vec![1.0; n])];
    for (name, col) in data.w_names().iter().zip(data.w_cols()) {
        fs_cols.push((name.clone(), col.clone()));
    }
    for (name, col) in data.z_names().iter().zip(data.z_cols()) {
        fs_cols.push((name.clone(), col.clone()));
    }
    let r = DesignMatrix::from_columns(fs_cols)?;
    let ones = WeightVector::ones(n);
    let pi = solve_ols(&r, data.d(), &ones)?;
    let vhat: Vec<f64> = (0..n).map(|i| data.d()[i] - r.row_dot(i, &pi)).collect();

    // Second stage design: (1, D, W…, v̂).
    let mut cols = vec![("const".to_string(), vec![1.0; n])];
    cols.push(("d".to_string(), data.d().to_vec()));
    for (name, col) in data.w_names().iter().zip(data.w_cols()) {
        cols.push((name.clone(), col.clone()));
    }
    cols.push(("control".to_string(), vhat));
    let x = DesignMatrix::from_columns(cols)?;
    let p = x.cols();
    let censored: Vec<bool> = (0..n).map(|i| data.y()[i] <= data.c()[i]).collect();

    // Start from OLS coefficients and the residual standard deviation.
    let b_ols = solve_ols(&x, data.y(), &ones)?;
    let rss: f64 = (0..n).map(|i| (data.y()[i] - x.row_dot(i, &b_ols)).powi(2)).sum();
    let y_scale = data.y().iter().map(|v| v.abs()).fold(1.0, f64::max);
    let sigma0 = (rss / n as f64).sqrt().max(1e-6 * y_scale);
    let mut h = 1.0 / sigma0;
    let mut gamma = DVector::from_iterator(p, b_ols.iter().map(|b| b * h));

    let loglik_at = |gamma: &DVector<f64>, h: f64| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            let xg = x.row_dot(i, gamma.as_slice());
            if censored[i] {
                let m = (h * data.c()[i] - xg).clamp(-TOBIT_CAP, TOBIT_CAP);
                ll += normal_cdf(m).ln();
            } else {
                let r = h * data.y()[i] - xg;
                ll += h.ln() + normal_pdf(r).ln();
            }
        }
        ll
    };

    let mut ll = loglik_at(&gamma, h);
    let grad_tol = 1e-9 * (1.0 + n as f64);
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > TOBIT_MAX_ITER {
            return Err(Error::NonConvergence {
                what: "censored-normal maximum likelihood".into(),
                iterations: TOBIT_MAX_ITER,
            });
        }

        // Gradient and Hessian in (γ, h).
        let mut grad = DVector::zeros(p + 1);
        let mut hess = DMatrix::zeros(p + 1, p + 1);
        for i in 0..n {
            let xg = x.row_dot(i, gamma.as_slice());
            let row = x.row(i);
            if censored[i] {
                let m = (h * data.c()[i] - xg).clamp(-TOBIT_CAP, TOBIT_CAP);
                let lam = normal_pdf(m) / normal_cdf(m);
                let dlam = -lam * (m + lam);
                for a in 0..p {
                    grad[a] += -lam * row[a];
                    for b in a..p {
                        hess[(a, b)] += dlam * row[a] * row[b];
                    }
                    hess[(a, p)] += -dlam * row[a] * data.c()[i];
                }
                grad[p] += lam * data.c()[i];
                hess[(p, p)] += dlam * data.c()[i] * data.c()[i];
            } else {
                let rres = h * data.y()[i] - xg;
                for a in 0..p {
                    grad[a] += rres * row[a];
                    for b in a..p {
                        hess[(a, b)] += -row[a] * row[b];
                    }
                    hess[(a, p)] += row[a] * data.y()[i];
                }
                grad[p] += 1.0 / h - rres * data.y()[i];
                hess[(p, p)] += -1.0 / (h * h) - data.y()[i] * data.y()[i];
            }
        }
        for a in 0..=p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }

        if grad.amax() <= grad_tol {
            break;
        }

        // Newton step on the concave objective.
        let neg_hess = -hess;
        let step = neg_hess
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::rank_deficient("tobit Hessian is singular"))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let g_new = &gamma + scale * step.rows(0, p);
            let h_new = h + scale * step[p];
            if h_new > 0.0 {
                let ll_new = loglik_at(&g_new, h_new);
                if ll_new.is_finite() && ll_new >= ll - 1e-12 * (1.0 + ll.abs()) {
                    gamma = g_new;
                    h = h_new;
                    ll = ll_new;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break; // step collapse at a numerically flat point
        }
    }

    let sigma = 1.0 / h;
    Ok(TobitFit {
        beta: gamma.iter().map(|g| g * sigma).collect(),
        sigma,
        loglik: ll,
        iterations,
    })
}

/// The comparison battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimEstimator {
    CqivOls,
    CqivQr,
    CqivDr,
    Cqr,
    QivOls,
    Qr,
    TobitCmle,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 7] = [
        SimEstimator::CqivOls,
        SimEstimator::CqivQr,
        SimEstimator::CqivDr,
        SimEstimator::Cqr,
        SimEstimator::QivOls,
        SimEstimator::Qr,
        SimEstimator::TobitCmle,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SimEstimator::CqivOls => "cqiv-ols",
            SimEstimator::CqivQr => "cqiv-qr",
            SimEstimator::CqivDr => "cqiv-dr",
            SimEstimator::Cqr => "cqr",
            SimEstimator::QivOls => "qiv-ols",
            SimEstimator::Qr => "qr",
            SimEstimator::TobitCmle => "tobit-cmle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.label() == s)
    }

    fn control_method(&self) -> Option<ControlMethod> {
        match self {
            SimEstimator::CqivOls | SimEstimator::QivOls => Some(ControlMethod::OlsEcdf),
            SimEstimator::CqivQr => Some(ControlMethod::QrGrid),
            SimEstimator::CqivDr => Some(ControlMethod::DistReg),
            SimEstimator::Cqr | SimEstimator::Qr => None,
            SimEstimator::TobitCmle => None,
        }
    }

    fn censoring_correction(&self) -> bool {
        matches!(
            self,
            SimEstimator::CqivOls | SimEstimator::CqivQr | SimEstimator::CqivDr | SimEstimator::Cqr
        )
    }

    /// Simulation second stage: X = (1, D, W, Φ⁻¹(V̂)), so the true control
    /// coefficient is ρ0.
    pub fn config(&self, u: f64) -> CqivConfig {
        let mut cfg = CqivConfig::new(u)
            .with_control(self.control_method())
            .with_transform(ControlTransform::NormalQuantile);
        cfg.censoring_correction = self.censoring_correction();
        cfg
    }
}

/// One estimator × quantile cell.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct McCell {
    pub estimator: SimEstimator,
    pub u: f64,
    /// Successful D-coefficient estimates, one per replication.
    pub d_estimates: Vec<f64>,
    /// Control-coefficient estimates where the estimator has one.
    pub control_estimates: Vec<f64>,
    pub failure_count: usize,
}

impl McCell {
    pub fn replication_count(&self) -> usize {
        self.d_estimates.len()
    }

    pub fn mean_bias(&self, true_coef: f64) -> f64 {
        if self.d_estimates.is_empty() {
            return f64::NAN;
        }
        self.d_estimates.iter().map(|e| e - true_coef).sum::<f64>()
            / self.d_estimates.len() as f64
    }

    pub fn rmse(&self, true_coef: f64) -> f64 {
        if self.d_estimates.is_empty() {
            return f64::NAN;
        }
        (self.d_estimates.iter().map(|e| (e - true_coef).powi(2)).sum::<f64>()
            / self.d_estimates.len() as f64)
            .sqrt()
    }

    pub fn median_control_estimate(&self) -> Option<f64> {
        if self.control_estimates.is_empty() {
            return None;
        }
        Some(quantile_type7(&self.control_estimates, 0.5))
    }
}

/// Aggregated Monte Carlo outcome.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct McResult {
    pub quantiles: Vec<f64>,
    pub estimators: Vec<SimEstimator>,
    pub cells: Vec<McCell>,
    pub replications: usize,
    pub true_d_coef: f64,
    pub seed: u64,
}

impl McResult {
    pub fn cell(&self, estimator: SimEstimator, u: f64) -> Option<&McCell> {
        self.cells.iter().find(|c| c.estimator == estimator && c.u == u)
    }
}

/// (d coefficient, control coefficient) per estimator and quantile within
/// one replication; `None` marks a failed fit.
type RepOutcomes = Vec<Vec<Option<(f64, Option<f64>)>>>;

/// Run the battery over independent replications (one RNG stream each) and
/// aggregate.
pub fn run_monte_carlo(
    design: &McDesign,
    estimators: &[SimEstimator],
    quantiles: &[f64],
    replications: usize,
    seed: u64,
) -> McResult {
    let per_rep: Vec<RepOutcomes> = map_indexed(replications, |rep| {
            let mut rng = child_rng(seed, rep as u64);
            let (data, _) = generate_design(design, &mut rng);
            estimators.iter().map(|est| run_estimator(*est, &data, quantiles)).collect()
        });

    let mut cells = Vec::with_capacity(estimators.len() * quantiles.len());
    for (e_idx, est) in estimators.iter().enumerate() {
        for (u_idx, &u) in quantiles.iter().enumerate() {
            let mut cell = McCell {
                estimator: *est,
                u,
                d_estimates: Vec::new(),
                control_estimates: Vec::new(),
                failure_count: 0,
            };
            for rep in per_rep.iter() {
                match &rep[e_idx][u_idx] {
                    Some((d_coef, control)) => {
                        cell.d_estimates.push(*d_coef);
                        if let Some(c) = control {
                            cell.control_estimates.push(*c);
                        }
                    }
                    None => cell.failure_count += 1,
                }
            }
            cells.push(cell);
        }
    }
    McResult {
        quantiles: quantiles.to_vec(),
        estimators: estimators.to_vec(),
        cells,
        replications,
        true_d_coef: design.true_d_coef(),
        seed,
    }
}

/// (D coefficient, control coefficient) per quantile; `None` marks a failed
/// fit.
fn run_estimator(
    est: SimEstimator,
    data: &Dataset,
    quantiles: &[f64],
) -> Vec<Option<(f64, Option<f64>)>> {
    match est {
        SimEstimator::TobitCmle => {
            // One location-model fit, compared at every quantile.
            match tobit_cmle(data) {
                Ok(fit) => {
                    let d_coef = fit.beta[1];
                    let control = Some(fit.beta[fit.beta.len() - 1]);
                    quantiles.iter().map(|_| Some((d_coef, control))).collect()
                }
                Err(_) => quantiles.iter().map(|_| None).collect(),
            }
        }
        _ => {
            let cfg = est.config(0.5);
            let ones = WeightVector::ones(data.n());
            match fit_cqiv_many(data, &cfg, quantiles, &ones) {
                Ok(fits) => fits
                    .into_iter()
                    .map(|res| {
                        res.ok().map(|fit| {
                            let d_coef = fit.beta[cfg.d_index()];
                            let control = cfg
                                .control_index(data)
                                .map(|idx| fit.beta[idx]);
                            (d_coef, control)
                        })
                    })
                    .collect(),
                Err(_) => quantiles.iter().map(|_| None).collect(),
            }
        }
    }
}

/// Pearson correlation, used by first-stage fidelity checks.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::normal::normal_quantile;
    use crate::rng::{master_rng, uniform_open01};

    #[test]
    fn censoring_fraction_matches_design_quantile() {
        let design = McDesign::homoskedastic(1000, 4);
        let mut rng = master_rng(4);
        let (data, truth) = generate_design(&design, &mut rng);
        // In-sample censoring: #{Y* ≤ C}/n sits at the design quantile.
        let frac = data.censored_fraction();
        assert!((frac - 0.38).abs() <= 0.002, "censored fraction {frac}");
        assert_eq!(truth.censor_point, data.c()[0]);
    }

    #[test]
    fn zero_rho_gives_uncorrelated_disturbances() {
        let mut design = McDesign::homoskedastic(1000, 9);
        design.rho0 = 0.0;
        let mut rng = master_rng(9);
        let (_, truth) = generate_design(&design, &mut rng);
        let corr = correlation(&truth.normal_v, &truth.normal_eps);
        assert!(corr.abs() < 0.1, "corr {corr}");
    }

    #[test]
    fn fixed_seed_reproduces_dataset() {
        let design = McDesign::homoskedastic(200, 31);
        let mut r1 = master_rng(31);
        let mut r2 = master_rng(31);
        let (d1, _) = generate_design(&design, &mut r1);
        let (d2, _) = generate_design(&design, &mut r2);
        assert_eq!(d1.y(), d2.y());
        assert_eq!(d1.d(), d2.d());
    }

    #[test]
    fn dgp_moments_at_scale() {
        let design = McDesign::homoskedastic(100_000, 77);
        let mut rng = master_rng(77);
        let (_, truth) = generate_design(&design, &mut rng);
        let corr = correlation(&truth.normal_v, &truth.normal_eps);
        assert!((corr - 0.9).abs() <= 0.01, "corr {corr}");
        let var_nv = {
            let m = truth.normal_v.iter().sum::<f64>() / truth.normal_v.len() as f64;
            truth.normal_v.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                / truth.normal_v.len() as f64
        };
        assert!((var_nv - 1.0).abs() <= 0.02, "var {var_nv}");
    }

    #[test]
    fn heteroskedastic_quantiles_match_closed_form() {
        // Q_D(v | W, Z) = π00 + π01·Z + π02·W + (π03 + π04·W)·Φ⁻¹(v),
        // checked against first-stage quantile regressions of D on
        // (1, Z, W, W·Φ⁻¹(v))-free parameterization at v ∈ {0.25, 0.75}:
        // the regression of D on (1, Z, W) at quantile v has coefficients
        // (π00 + π03·Φ⁻¹(v), π01, π02 + π04·Φ⁻¹(v)).
        use crate::numkit::qr::solve_weighted_qr;
        let design = McDesign::heteroskedastic(10_000, 55);
        let mut rng = master_rng(55);
        let (data, _) = generate_design(&design, &mut rng);
        let x = DesignMatrix::from_columns(vec![
            ("const".into(), vec![1.0; data.n()]),
            ("z".into(), data.z_cols()[0].clone()),
            ("w".into(), data.w_cols()[0].clone()),
        ])
        .unwrap();
        let ones = WeightVector::ones(data.n());
        for v in [0.25, 0.75] {
            let fit = solve_weighted_qr(&x, data.d(), v, &ones).unwrap();
            let phi_inv = normal_quantile(v).unwrap();
            let expect = [phi_inv, 1.0, 1.0 + phi_inv];
            for (j, &e) in expect.iter().enumerate() {
                assert!(
                    (fit.beta[j] - e).abs() < 0.12,
                    "v={v}, coefficient {j}: {} vs {e}",
                    fit.beta[j]
                );
            }
        }
    }

    #[test]
    fn tobit_without_censoring_equals_ols() {
        let design = McDesign::homoskedastic(400, 12);
        let mut rng = master_rng(12);
        let (data, truth) = generate_design(&design, &mut rng);
        // Rebuild the dataset from the latent response with an unreachable floor.
        let uncensored = Dataset::with_constant_censoring(
            truth.y_star.clone(),
            data.d().to_vec(),
            vec![data.w_cols()[0].clone()],
            vec![data.z_cols()[0].clone()],
            truth.y_star.iter().copied().fold(f64::INFINITY, f64::min) - 1.0,
        )
        .unwrap();
        let tobit = tobit_cmle(&uncensored).unwrap();

        // OLS on the same second-stage design.
        let n = uncensored.n();
        let mut fs = vec![("const".to_string(), vec![1.0; n])];
        fs.push(("w".into(), uncensored.w_cols()[0].clone()));
        fs.push(("z".into(), uncensored.z_cols()[0].clone()));
        let r = DesignMatrix::from_columns(fs).unwrap();
        let ones = WeightVector::ones(n);
        let pi = solve_ols(&r, uncensored.d(), &ones).unwrap();
        let vhat: Vec<f64> =
            (0..n).map(|i| uncensored.d()[i] - r.row_dot(i, &pi)).collect();
        let x = DesignMatrix::from_columns(vec![
            ("const".into(), vec![1.0; n]),
            ("d".into(), uncensored.d().to_vec()),
            ("w".into(), uncensored.w_cols()[0].clone()),
            ("control".into(), vhat),
        ])
        .unwrap();
        let ols = solve_ols(&x, uncensored.y(), &ones).unwrap();
        for (j, &o) in ols.iter().enumerate() {
            assert!(
                (tobit.beta[j] - o).abs() < 1e-6,
                "coefficient {j}: tobit {} vs ols {o}",
                tobit.beta[j]
            );
        }
    }

    #[test]
    fn tobit_is_locally_optimal() {
        let design = McDesign::homoskedastic(30, 21);
        let mut rng = master_rng(21);
        let (data, _) = generate_design(&design, &mut rng);
        let fit = tobit_cmle(&data).unwrap();

        // Log-likelihood evaluator on the same design for perturbation probes.
        let n = data.n();
        let mut fs = vec![("const".to_string(), vec![1.0; n])];
        fs.push(("w".into(), data.w_cols()[0].clone()));
        fs.push(("z".into(), data.z_cols()[0].clone()));
        let r = DesignMatrix::from_columns(fs).unwrap();
        let ones = WeightVector::ones(n);
        let pi = solve_ols(&r, data.d(), &ones).unwrap();
        let vhat: Vec<f64> = (0..n).map(|i| data.d()[i] - r.row_dot(i, &pi)).collect();
        let ll = |beta: &[f64], sigma: f64| -> f64 {
            (0..n)
                .map(|i| {
                    let mean = beta[0]
                        + beta[1] * data.d()[i]
                        + beta[2] * data.w_cols()[0][i]
                        + beta[3] * vhat[i];
                    if data.y()[i] <= data.c()[i] {
                        normal_cdf((data.c()[i] - mean) / sigma).ln()
                    } else {
                        (normal_pdf((data.y()[i] - mean) / sigma) / sigma).ln()
                    }
                })
                .sum()
        };
        let at_optimum = ll(&fit.beta, fit.sigma);
        assert!((at_optimum - fit.loglik).abs() < 1e-8);

        let mut rng2 = master_rng(2121);
        for _ in 0..100 {
            let mut beta = fit.beta.clone();
            for b in beta.iter_mut() {
                *b += 0.2 * (uniform_open01(&mut rng2) - 0.5);
            }
            let sigma = fit.sigma * (1.0 + 0.2 * (uniform_open01(&mut rng2) - 0.5));
            assert!(ll(&beta, sigma) <= at_optimum + 1e-10);
        }
    }

    #[test]
    fn empty_run_produces_empty_cells() {
        let design = McDesign::homoskedastic(50, 1);
        let out = run_monte_carlo(&design, &[SimEstimator::Qr], &[0.5], 0, 1);
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.cells[0].replication_count(), 0);
        assert_eq!(out.cells[0].failure_count, 0);
    }

    #[test]
    fn rmse_dominates_absolute_bias() {
        let design = McDesign::homoskedastic(300, 3);
        let out = run_monte_carlo(
            &design,
            &[SimEstimator::Qr, SimEstimator::TobitCmle],
            &[0.25, 0.5],
            8,
            3,
        );
        for cell in &out.cells {
            if cell.replication_count() > 0 {
                assert!(cell.rmse(1.0) >= cell.mean_bias(1.0).abs() - 1e-12);
            }
        }
    }

    #[test]
    fn replication_streams_are_execution_order_independent() {
        // Slot-based aggregation keyed by replication index: running the
        // same configuration twice gives identical cells.
        let design = McDesign::homoskedastic(150, 88);
        let a = run_monte_carlo(&design, &[SimEstimator::CqivOls], &[0.5], 6, 88);
        let b = run_monte_carlo(&design, &[SimEstimator::CqivOls], &[0.5], 6, 88);
        assert_eq!(a.cells[0].d_estimates, b.cells[0].d_estimates);
    }
}
